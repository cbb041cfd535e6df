//! The `run` and `plan` commands.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;
use uavmon::hazard::HazardParams;
use uavmon::optimizer::path_sample_times;
use uavmon::sim::{compare_edge, generate_scenario, run_pipeline, run_sweep, run_trial, Method, TrialRecord};
use uavmon::spline::SplinePath;
use uavmon::{Error, Point2};

use crate::config::{resolve_out_dir, ConfigError, PlanConfig, RunConfig};
use crate::{plot, report};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_TRIAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "uavmon", version, about = "Bi-level UAV hazard-monitoring planner")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Overrides the seed in the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Trials run concurrently.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    /// Record failed trials and finish the sweep instead of stopping.
    #[arg(long, global = true)]
    pub keep_going: bool,
    /// Skip the SVG figures.
    #[arg(long, global = true)]
    pub no_plots: bool,
    /// Output directory; beats UAVMON_OUT and the config file.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Runs the sweep described by a config file.
    Run { config: PathBuf },
    /// Plans one edge of a scenario with every planner.
    Plan {
        scenario: PathBuf,
        /// Index into the route's edge list.
        #[arg(long)]
        edge: usize,
    },
}

/// Runs a parsed command line and returns the process exit code.
pub fn execute(cli: &Cli) -> i32 {
    match &cli.command {
        Command::Run { config } => cmd_run(cli, config),
        Command::Plan { scenario, edge } => cmd_plan(cli, scenario, *edge),
    }
}

fn config_failure(e: ConfigError) -> i32 {
    eprintln!("error: {e}");
    EXIT_CONFIG
}

fn io_failure(path: &Path, e: std::io::Error) -> i32 {
    eprintln!("error: cannot write {}: {e}", path.display());
    EXIT_IO
}

fn write_file(path: &Path, body: &[u8]) -> Result<(), i32> {
    fs::write(path, body).map_err(|e| io_failure(path, e))
}

fn create(path: &Path) -> Result<BufWriter<fs::File>, i32> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| io_failure(path, e))
}

fn cmd_run(cli: &Cli, config: &Path) -> i32 {
    let mut cfg = match RunConfig::load(config) {
        Ok(c) => c,
        Err(e) => return config_failure(e),
    };
    if let Some(seed) = cli.seed {
        cfg.sweep.seed = seed;
    }
    let out = resolve_out_dir(cli.out.as_deref(), &cfg.output);
    match run_and_write(cli, &cfg, &out) {
        Ok(code) | Err(code) => code,
    }
}

fn run_and_write(cli: &Cli, cfg: &RunConfig, out: &Path) -> Result<i32, i32> {
    fs::create_dir_all(out).map_err(|e| io_failure(out, e))?;
    let total = cfg.sweep.keys().len();
    let done = std::sync::atomic::AtomicUsize::new(0);
    let progress = |r: &TrialRecord| {
        let n = done.fetch_add(1, std::sync::atomic::Ordering::SeqCst) + 1;
        let status = match &r.outcome {
            Ok(_) if r.timed_out => "ok (over time limit)".to_string(),
            Ok(_) => "ok".to_string(),
            Err(e) => format!("failed: {e}"),
        };
        let cell = |c: Option<usize>| c.map_or("-".to_string(), |v| v.to_string());
        eprintln!(
            "[{n}/{total}] known {} pseudo {} trial {} ({:.1} s): {status}",
            cell(r.key.cell_known),
            cell(r.key.cell_pseudo),
            r.key.trial,
            r.wall_time_s
        );
    };
    let records = run_sweep(
        &cfg.sweep,
        &cfg.scenario,
        &cfg.settings,
        cli.jobs,
        !cli.keep_going,
        &progress,
    )
    .map_err(|e| {
        eprintln!("error: {e}");
        EXIT_CONFIG
    })?;

    let methods = &cfg.sweep.methods;
    let results = out.join("results.csv");
    report::write_results(create(&results)?, &records, methods).map_err(|e| io_failure(&results, e))?;
    let timings = out.join("timings.csv");
    report::write_timings(create(&timings)?, &records).map_err(|e| io_failure(&timings, e))?;
    let summary = report::summarize(&records, methods);
    let mut json = serde_json::to_string_pretty(&summary).expect("summary serialises");
    json.push('\n');
    write_file(&out.join("summary.json"), json.as_bytes())?;

    if cfg.output.plots && !cli.no_plots {
        if let Some(svg) = plot::discovery_figure(&summary, methods) {
            write_file(&out.join("discovery.svg"), svg.as_bytes())?;
        }
        if let Some(first) = records.iter().find(|r| r.outcome.is_ok()) {
            let scenario = cfg.sweep.scenario(&first.key, &cfg.scenario);
            let trial = run_trial(&cfg.sweep, &first.key, &cfg.scenario, &cfg.settings);
            if let (Ok(scenario), Ok(trial)) = (scenario, trial) {
                let title = format!("trial {} (seed {})", first.key.trial, first.key.seed);
                let svg = plot::route_figure(
                    &scenario,
                    &trial.original,
                    trial.edge_cvt.as_ref(),
                    &trial.flown,
                    &title,
                );
                write_file(&out.join("route.svg"), svg.as_bytes())?;
            }
        }
    }

    for g in &summary.methods {
        let found = g
            .discovered
            .map(|d| format!("  discovered {:.2} +- {:.2}", d.mean, d.std))
            .unwrap_or_default();
        println!(
            "{:10} n {:4}  ECR {:.4} +- {:.4}  EDV {:.4}{found}",
            g.method.label(),
            g.n,
            g.ecr.mean,
            g.ecr.std,
            g.edv.mean
        );
    }
    let failed = summary.failed_trials;
    if failed > 0 {
        eprintln!("{failed} trial(s) failed");
        if !cli.keep_going {
            return Ok(EXIT_TRIAL);
        }
    }
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct PlannedPath {
    method: Method,
    gamma: f64,
    arc_length: f64,
    samples: Vec<Point2>,
}

/// Everything needed to recompute the reported `Gamma` values.
#[derive(Serialize)]
struct PlanReport {
    edge: usize,
    seed: u64,
    start: Point2,
    end: Point2,
    budget: f64,
    hazard: HazardParams,
    known: Vec<Point2>,
    grid: Vec<Point2>,
    prior_samples: Vec<Point2>,
    paths: Vec<PlannedPath>,
}

fn samples_of(path: &SplinePath, delta_s: f64) -> Vec<Point2> {
    path_sample_times(path, delta_s)
        .into_iter()
        .map(|t| path.eval(t.min(path.tf())).expect("sample inside horizon"))
        .collect()
}

fn cmd_plan(cli: &Cli, file: &Path, edge: usize) -> i32 {
    let mut cfg = match PlanConfig::load(file) {
        Ok(c) => c,
        Err(e) => return config_failure(e),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let out = resolve_out_dir(cli.out.as_deref(), &cfg.output);
    let scenario = match generate_scenario(&cfg.scenario, cfg.seed) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    let trial = match run_pipeline(&scenario, &[Method::EdgeCvt], &cfg.settings) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_TRIAL;
        }
    };
    let route = &trial.edge_cvt.as_ref().expect("edge CVT requested").route;
    let cmp = match compare_edge(&scenario, route, edge, &cfg.settings) {
        Ok(c) => c,
        Err(e @ Error::InvalidParameter(_)) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_TRIAL;
        }
    };
    for (m, _, g) in &cmp.paths {
        println!("{:10} {g:.12}", m.label());
    }
    let delta_s = scenario.hazard.delta_s;
    let report = PlanReport {
        edge,
        seed: cfg.seed,
        start: cmp.problem.start,
        end: cmp.problem.end,
        budget: cmp.problem.budget,
        hazard: scenario.hazard,
        known: scenario.known.clone(),
        grid: cmp.problem.grid.clone(),
        prior_samples: cmp.problem.field.samples().to_vec(),
        paths: cmp
            .paths
            .iter()
            .map(|(m, p, g)| PlannedPath {
                method: *m,
                gamma: *g,
                arc_length: p.arc_length(),
                samples: samples_of(p, delta_s),
            })
            .collect(),
    };
    let write = || -> Result<(), i32> {
        fs::create_dir_all(&out).map_err(|e| io_failure(&out, e))?;
        let mut json = serde_json::to_string(&report).expect("plan report serialises");
        json.push('\n');
        write_file(&out.join(format!("plan_edge_{edge}.json")), json.as_bytes())?;
        if cfg.output.plots && !cli.no_plots {
            let svg = plot::edge_figure(&scenario, &cmp, 60);
            write_file(&out.join(format!("plan_edge_{edge}.svg")), svg.as_bytes())?;
        }
        Ok(())
    };
    match write() {
        Ok(()) => EXIT_OK,
        Err(code) => code,
    }
}
