//! Bi-level UAV hazard-monitoring planner.
//!
//! The high level routes a UAV fleet through known hazard sites
//! ([`routing`]), augments the route with pseudo-nodes placed by a
//! centroidal Voronoi tessellation ([`cvt`]) and splits the spare battery
//! budget over the route edges with a segment Voronoi diagram ([`budget`]).
//! The low level plans a B-spline trajectory per edge ([`spline`],
//! [`optimizer`]) that minimises the mean posterior probability of an
//! undiscovered hazard ([`hazard`]). [`sim`] wires the stages into
//! Monte-Carlo experiments and [`metrics`] scores route coverage.

pub mod budget;
pub mod cvt;
pub mod error;
pub mod geometry;
pub mod hazard;
pub mod lbfgs;
pub mod metrics;
pub mod optimizer;
pub mod routing;
pub mod scalar;
pub mod sim;
pub mod spline;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Double-precision point.
pub type Point2 = geometry::Point<f64>;
/// Double-precision segment.
pub type Segment2 = geometry::Segment<f64>;
/// Double-precision rectangular domain.
pub type Domain = geometry::RectDomain<f64>;
/// Double-precision uniform grid.
pub type Grid = geometry::UniformGrid<f64>;
