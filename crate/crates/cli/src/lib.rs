//! Command-line front end: configuration, sweep execution, result files and figures.

pub mod app;
pub mod config;
pub mod plot;
pub mod report;
