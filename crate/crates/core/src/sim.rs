//! Scenario generation, baseline paths, simulated traversal and the trial pipeline.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::budget::{build_segment_voronoi, planner_budgets, SegmentVoronoi};
use crate::cvt::{place_initial_pseudo_nodes, run_cvt, CvtConfig, GeneratorSet, MIN_CLEARANCE};
use crate::error::{Error, Result};
use crate::hazard::{detect_prob, sample_unknown_hazards_with, HazardField, HazardParams};
use crate::metrics::edge_coverage;
use crate::optimizer::{objective_gamma, plan_edge, EdgePlanningProblem, KinematicBounds, OptimizerConfig, PlanStatus};
use crate::routing::{route_edges, solve_vrp, FleetSpec, NodeSet, Route, SolverConfig};
use crate::spline::{fit_to_polyline, polyline_length, sample_times, EndVelocities, SplinePath};
use crate::{Domain, Grid, Point2};

/// Rung spacing of the lawnmower: the distance where detection drops to 10%.
pub fn rung_spacing(beta_sense: f64) -> f64 {
    (10f64.ln() / beta_sense).sqrt()
}

fn lawnmower_with_width(start: Point2, end: Point2, spacing: f64, half_width: f64) -> Vec<Point2> {
    let len = start.dist(end);
    let axis = (end - start) / len;
    let side = axis.perp();
    let rungs = ((len / spacing).round() as usize).max(1);
    let mut pts = Vec::with_capacity(2 * rungs + 2);
    pts.push(start);
    let mut sign = 1.0;
    for i in 0..rungs {
        let base = start + axis * ((i as f64 + 0.5) * len / rungs as f64);
        pts.push(base + side * (sign * half_width));
        pts.push(base - side * (sign * half_width));
        sign = -sign;
    }
    pts.push(end);
    pts
}

/// Back-and-forth sweep along `start -> end` whose length is `budget`.
///
/// Rungs run perpendicular to the segment, evenly spaced about `spacing`
/// apart; the sweep width is solved for so the polyline length matches.
pub fn lawnmower_path(start: Point2, end: Point2, budget: f64, spacing: f64) -> Result<Vec<Point2>> {
    let len = start.dist(end);
    if !(len > 0.0) {
        return Err(Error::param("lawnmower needs distinct endpoints"));
    }
    if !(spacing > 0.0) {
        return Err(Error::param("rung spacing must be positive"));
    }
    if budget < len * (1.0 - 1e-12) {
        return Err(Error::param(format!(
            "budget {budget} is shorter than the edge ({len})"
        )));
    }
    if budget <= len * (1.0 + 1e-12) {
        return Ok(vec![start, end]);
    }
    let length_at = |h: f64| polyline_length(&lawnmower_with_width(start, end, spacing, h));
    let mut hi = (budget - len).max(1.0);
    while length_at(hi) < budget {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if length_at(mid) < budget {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-12 * hi {
            break;
        }
    }
    Ok(lawnmower_with_width(start, end, spacing, 0.5 * (lo + hi)))
}

/// Lawnmower spline of arc length `budget` flown from `t0` at the nominal speed.
///
/// The spline smooths the sweep's corners and comes out shorter than the
/// polyline it fits, so the polyline's own length target is raised by
/// bisection until the fitted spline matches `budget`.
pub fn lawnmower_spline(
    start: Point2,
    end: Point2,
    v0: Point2,
    vf: Point2,
    budget: f64,
    beta_sense: f64,
    v_nominal: f64,
    t0: f64,
    cfg: &OptimizerConfig,
) -> Result<SplinePath> {
    let spacing = rung_spacing(beta_sense);
    let n = cfg.n_control(budget);
    let tf = t0 + budget / v_nominal;
    let vel = EndVelocities {
        start: Some(v0),
        end: Some(vf),
    };
    let fit = |target: f64| -> Result<SplinePath> {
        let poly = lawnmower_path(start, end, target, spacing)?;
        fit_to_polyline(&poly, cfg.degree, n, t0, tf, vel)
    };
    let base = fit(budget)?;
    if base.arc_length() >= budget {
        return Ok(base);
    }
    let mut lo = budget;
    let mut hi = budget;
    let mut hi_path = base;
    for _ in 0..30 {
        hi = budget + 2.0 * (hi - budget).max(0.05 * budget);
        hi_path = fit(hi)?;
        if hi_path.arc_length() >= budget {
            break;
        }
        lo = hi;
    }
    let mut best = hi_path;
    for _ in 0..40 {
        let len = best.arc_length();
        if (len - budget).abs() <= 1e-4 * budget {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let p = fit(mid)?;
        let l = p.arc_length();
        if l < budget {
            lo = mid;
        } else {
            hi = mid;
        }
        if (l - budget).abs() < (len - budget).abs() {
            best = p;
        }
    }
    Ok(best)
}

/// Straight, constant-speed spline along the edge.
pub fn straight_spline(start: Point2, end: Point2, speed: f64, t0: f64, degree: usize) -> Result<SplinePath> {
    let len = start.dist(end);
    SplinePath::line(start, end, degree, degree + 1, t0, t0 + len / speed)
}

/// Flies `path`, sampling every `params.delta_s`; each undiscovered hazard is
/// found at a sample with probability `detect_prob`.
///
/// `discovered` marks hazards found earlier and is updated in place. Returns
/// the indices newly discovered (in order of discovery) and the sample points.
pub fn traverse_and_detect(
    path: &SplinePath,
    unknown: &[Point2],
    discovered: &mut [bool],
    params: &HazardParams,
    rng: &mut impl Rng,
) -> (Vec<usize>, Vec<Point2>) {
    let mut found = Vec::new();
    let mut samples = Vec::new();
    for t in sample_times(path.t0(), path.tf(), params.delta_s) {
        let s = path.combine(&path.basis_unchecked(t.min(path.tf()), 0), 0);
        samples.push(s);
        for (i, h) in unknown.iter().enumerate() {
            if discovered[i] {
                continue;
            }
            let p = detect_prob(s, *h, params.beta_sense);
            if rng.random::<f64>() < p {
                discovered[i] = true;
                found.push(i);
            }
        }
    }
    (found, samples)
}

/// Seeded convenience wrapper over [`traverse_and_detect`] for a single path.
pub fn traverse_seeded(
    path: &SplinePath,
    unknown: &[Point2],
    params: &HazardParams,
    seed: u64,
) -> (Vec<usize>, Vec<Point2>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut disc = vec![false; unknown.len()];
    traverse_and_detect(path, unknown, &mut disc, params, &mut rng)
}

/// Derives an independent stream seed from `base` and a tag path (SplitMix64 mixing).
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(splitmix(base), |z, &p| {
        splitmix(z ^ splitmix(p.wrapping_add(0x632B_E59B_D9B4_E019)))
    })
}

fn splitmix(z: u64) -> u64 {
    let mut z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Route-construction and path-planning methods compared by the harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Original,
    NodeCvt,
    EdgeCvt,
    Optimized,
    Lawnmower,
    Straight,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Original,
        Method::NodeCvt,
        Method::EdgeCvt,
        Method::Optimized,
        Method::Lawnmower,
        Method::Straight,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Method::Original => "original",
            Method::NodeCvt => "node-cvt",
            Method::EdgeCvt => "edge-cvt",
            Method::Optimized => "optimized",
            Method::Lawnmower => "lawnmower",
            Method::Straight => "straight",
        }
    }

    /// Path methods fly the route; the others only build it.
    pub fn is_path(self) -> bool {
        matches!(self, Method::Optimized | Method::Lawnmower | Method::Straight)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.label() == s)
            .ok_or_else(|| Error::param(format!("unknown method {s:?}")))
    }
}

/// Inputs from which [`generate_scenario`] draws a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSpec {
    pub domain: Domain,
    /// Defaults to the domain centre.
    pub depot: Option<Point2>,
    pub n_known: usize,
    pub n_unknown: usize,
    pub vehicles: usize,
    /// Split evenly over the vehicles.
    pub total_budget: f64,
    pub hazard: HazardParams,
    /// Pseudo-node count and CVT settings; the seed is derived per scenario.
    pub cvt: CvtConfig,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            domain: Domain::square(1000.0).expect("valid square"),
            depot: None,
            n_known: 10,
            n_unknown: 50,
            vehicles: 1,
            total_budget: 5000.0,
            hazard: HazardParams::default(),
            cvt: CvtConfig::default(),
        }
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        self.domain.validate()?;
        self.hazard.validate()?;
        if let Some(d) = self.depot {
            if !self.domain.contains(d) {
                return Err(Error::InvalidGeometry(format!(
                    "depot ({}, {}) outside the domain",
                    d.x, d.y
                )));
            }
        }
        if self.n_known == 0 || self.vehicles == 0 {
            return Err(Error::param("scenario needs at least one known node and one vehicle"));
        }
        if self.n_known < self.vehicles {
            return Err(Error::param("every vehicle needs a known node to visit"));
        }
        if !(self.total_budget > 0.0) || !self.total_budget.is_finite() {
            return Err(Error::param("total budget must be positive"));
        }
        if self.cvt.n_pseudo == 0 {
            // no CVT runs; only the density settings must be sane
            return CvtConfig {
                n_pseudo: 1,
                ..self.cvt.clone()
            }
            .validate(0);
        }
        self.cvt.validate(self.n_known + 1)
    }
}

/// One fully specified experiment instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub domain: Domain,
    pub depot: Point2,
    pub known: Vec<Point2>,
    pub unknown: Vec<Point2>,
    pub fleet: FleetSpec,
    pub total_budget: f64,
    pub hazard: HazardParams,
    pub cvt: CvtConfig,
    pub seed: u64,
}

impl Scenario {
    pub fn n_pseudo(&self) -> usize {
        self.cvt.n_pseudo
    }

    pub fn known_nodes(&self) -> Result<NodeSet> {
        NodeSet::known(self.depot, self.known.clone())
    }
}

const MAX_NODE_ATTEMPTS: usize = 100_000;

/// Known nodes uniform over the domain (kept clear of the depot and each
/// other), then the unknown hazards drawn from the prior; fully seeded.
pub fn generate_scenario(spec: &ScenarioSpec, seed: u64) -> Result<Scenario> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let depot = spec.depot.unwrap_or_else(|| spec.domain.center());
    let mut known: Vec<Point2> = Vec::with_capacity(spec.n_known);
    let mut attempts = 0;
    while known.len() < spec.n_known {
        attempts += 1;
        if attempts > MAX_NODE_ATTEMPTS * spec.n_known {
            return Err(Error::SamplerStalled(attempts));
        }
        let p = spec.domain.from_unit(rng.random::<f64>(), rng.random::<f64>());
        if p.dist(depot) >= MIN_CLEARANCE && known.iter().all(|k| k.dist(p) >= MIN_CLEARANCE) {
            known.push(p);
        }
    }
    let unknown = sample_unknown_hazards_with(&known, &spec.hazard, &spec.domain, spec.n_unknown, &mut rng)?;
    let fleet = FleetSpec::uniform(spec.vehicles, spec.total_budget / spec.vehicles as f64)?;
    Ok(Scenario {
        domain: spec.domain,
        depot,
        known,
        unknown,
        fleet,
        total_budget: spec.total_budget,
        hazard: spec.hazard,
        cvt: CvtConfig {
            seed: derive_seed(seed, &[1]),
            ..spec.cvt.clone()
        },
        seed,
    })
}

/// Solver settings shared by every trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSettings {
    pub bounds: KinematicBounds,
    pub optimizer: OptimizerConfig,
    /// Evaluation points per side of an edge cell's bounding box.
    pub eval_points_per_side: usize,
    pub voronoi_resolution: usize,
    pub metrics_resolution: usize,
    pub vrp_restarts: usize,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        Self {
            bounds: KinematicBounds::default(),
            optimizer: OptimizerConfig::default(),
            eval_points_per_side: 15,
            voronoi_resolution: crate::budget::DEFAULT_RESOLUTION,
            metrics_resolution: crate::metrics::DEFAULT_RESOLUTION,
            vrp_restarts: 20,
        }
    }
}

impl PipelineSettings {
    pub fn validate(&self) -> Result<()> {
        self.bounds.validate()?;
        self.optimizer.validate()?;
        if self.eval_points_per_side == 0 || self.voronoi_resolution == 0 || self.metrics_resolution == 0 {
            return Err(Error::param("grid resolutions must be positive"));
        }
        Ok(())
    }

    fn vrp(&self, seed: u64) -> SolverConfig {
        SolverConfig {
            restarts: self.vrp_restarts,
            seed,
            ..SolverConfig::default()
        }
    }
}

/// Route through the known nodes plus CVT pseudo-nodes.
#[derive(Debug, Clone)]
pub struct AugmentedRoute {
    pub pseudo: Vec<Point2>,
    /// Pseudo-nodes removed because no route fit the budget with them.
    pub dropped: usize,
    pub nodes: NodeSet,
    pub route: Route,
}

/// Runs node- or edge-based CVT seeded from `base` and re-solves the VRP.
///
/// The depot and known nodes are fixed generators. If no route over the
/// augmented set fits the vehicle budgets, pseudo-nodes are dropped from the
/// end until one does.
pub fn augment_route(
    scenario: &Scenario,
    base: &Route,
    edge_based: bool,
    settings: &PipelineSettings,
) -> Result<AugmentedRoute> {
    let n = scenario.n_pseudo();
    let mut fixed = vec![scenario.depot];
    fixed.extend_from_slice(&scenario.known);
    let mut pseudo = if n == 0 {
        Vec::new()
    } else {
        let init = place_initial_pseudo_nodes(&fixed, &scenario.domain, n, scenario.cvt.seed)?;
        let cfg = if edge_based {
            scenario.cvt.clone()
        } else {
            scenario.cvt.clone().node_based()
        };
        let edges = if edge_based { route_edges(base) } else { Vec::new() };
        let gens = GeneratorSet { fixed, adaptive: init };
        run_cvt(gens, &edges, &scenario.domain, &cfg)
            .map_err(|e| e.in_stage("cvt"))?
            .generators
            .adaptive
    };
    let vrp = settings.vrp(scenario.seed);
    let mut dropped = 0;
    loop {
        let nodes = NodeSet::augmented(scenario.depot, &scenario.known, &pseudo)?;
        match solve_vrp(&nodes, &scenario.fleet, &vrp) {
            Ok(route) => {
                return Ok(AugmentedRoute {
                    pseudo,
                    dropped,
                    nodes,
                    route,
                })
            }
            Err(Error::InfeasibleInstance { .. }) if !pseudo.is_empty() => {
                pseudo.pop();
                dropped += 1;
            }
            Err(e) => return Err(e.in_stage("augmented routing")),
        }
    }
}

/// Evaluation points of edge `edge`: a `per_side` x `per_side` lattice of
/// cell centres over its Voronoi cell's bounding box, keeping those nearest
/// the edge. Falls back to the edge midpoint when the cell is empty.
pub fn evaluation_grid(sv: &SegmentVoronoi, edge: usize, per_side: usize) -> Vec<Point2> {
    let mid = sv.edges()[edge].midpoint();
    let Some((x0, x1, y0, y1)) = sv.bounding_box(edge) else {
        return vec![mid];
    };
    let (dx, dy) = ((x1 - x0) / per_side as f64, (y1 - y0) / per_side as f64);
    let pts: Vec<Point2> = (0..per_side)
        .flat_map(|iy| (0..per_side).map(move |ix| (ix, iy)))
        .map(|(ix, iy)| Point2::new(x0 + (ix as f64 + 0.5) * dx, y0 + (iy as f64 + 0.5) * dy))
        .filter(|&p| sv.cell_of(p) == edge)
        .collect();
    if pts.is_empty() {
        vec![mid]
    } else {
        pts
    }
}

/// Result of flying every edge of a route with one path method.
#[derive(Debug, Clone)]
pub struct FlownRoute {
    pub method: Method,
    /// Per vehicle, per edge.
    pub paths: Vec<Vec<SplinePath>>,
    pub budgets: Vec<Vec<f64>>,
    /// Sample points taken on each edge, in flight order.
    pub samples: Vec<Vec<Point2>>,
    /// Samples known to the planner before each edge was planned.
    pub samples_before: Vec<usize>,
    pub discovered: Vec<bool>,
    /// Edges flown with a substitute path because planning failed.
    pub fallback_edges: usize,
    /// Known hazards plus every sample taken, in flight order.
    pub field: HazardField,
}

impl FlownRoute {
    pub fn length(&self) -> f64 {
        self.paths.iter().flatten().map(|p| p.arc_length()).sum()
    }

    pub fn vehicle_lengths(&self) -> Vec<f64> {
        self.paths
            .iter()
            .map(|v| v.iter().map(|p| p.arc_length()).sum())
            .collect()
    }

    pub fn discovered_count(&self) -> usize {
        self.discovered.iter().filter(|&&d| d).count()
    }
}

/// Plans and flies `route` edge by edge with `method`.
///
/// Samples from every flown edge join the hazard field before the next edge
/// is planned. Each edge leaves at the nominal speed toward the next node.
/// A path that misses its budget by more than the budget tolerance is
/// replaced: an optimizer failure (or a plan scoring worse than its
/// initialisation) flies the lawnmower initialisation, and a lawnmower that
/// overruns flies the straight edge.
pub fn fly_route(
    scenario: &Scenario,
    route: &Route,
    method: Method,
    settings: &PipelineSettings,
    rng: &mut impl Rng,
) -> Result<FlownRoute> {
    if !method.is_path() {
        return Err(Error::param(format!("{method} is not a path method")));
    }
    let edges = route_edges(route);
    let sv = build_segment_voronoi(&edges, &scenario.domain, settings.voronoi_resolution)
        .map_err(|e| e.in_stage("segment voronoi"))?;
    let budgets = planner_budgets(route, &scenario.fleet, &sv).map_err(|e| e.in_stage("budget"))?;
    let opt = &settings.optimizer;
    let v_nom = settings.bounds.v_nominal();
    let beta = scenario.hazard.beta_sense;
    let slack = 1.0 + opt.tolerances.budget;
    let mut field = HazardField::new(scenario.known.clone(), scenario.hazard)?;
    let mut discovered = vec![false; scenario.unknown.len()];
    let mut out = FlownRoute {
        method,
        paths: Vec::new(),
        budgets: budgets.clone(),
        samples: Vec::new(),
        samples_before: Vec::new(),
        discovered: Vec::new(),
        fallback_edges: 0,
        field: HazardField::new(scenario.known.clone(), scenario.hazard)?,
    };
    let mut offset = 0;
    for (m, vb) in budgets.iter().enumerate() {
        let ve = route.vehicle_edges(m);
        let mut t = 0.0;
        let mut v_in: Option<Point2> = None;
        let mut paths = Vec::with_capacity(ve.len());
        for (k, e) in ve.iter().enumerate() {
            let (a, b) = (e.a(), e.b());
            let v0 = v_in.unwrap_or(e.direction() * v_nom);
            let vf = ve.get(k + 1).unwrap_or(e).direction() * v_nom;
            let budget = vb[k];
            let straight = || straight_spline(a, b, v_nom, t, opt.degree);
            let lawnmower =
                || lawnmower_spline(a, b, v0, vf, budget, beta, v_nom, t, opt).map_err(|e| e.in_stage("lawnmower"));
            let (path, fallback) = match method {
                Method::Straight => (straight()?, false),
                Method::Lawnmower => {
                    let init = lawnmower()?;
                    if init.arc_length() <= budget * slack {
                        (init, false)
                    } else {
                        (straight()?, true)
                    }
                }
                _ => {
                    let init = lawnmower()?;
                    let problem = EdgePlanningProblem {
                        start: a,
                        end: b,
                        v0,
                        vf,
                        bounds: settings.bounds,
                        budget,
                        grid: evaluation_grid(&sv, offset + k, settings.eval_points_per_side),
                        field: field.clone(),
                    };
                    match plan_edge(&problem, &init, opt) {
                        Ok(plan) if plan.status != PlanStatus::Infeasible && plan.gamma <= plan.gamma_init => {
                            (plan.path, false)
                        }
                        Ok(_) | Err(Error::InfeasibleInit { .. }) => {
                            if init.arc_length() <= budget * slack {
                                (init, true)
                            } else {
                                (straight()?, true)
                            }
                        }
                        Err(e) => return Err(e.in_stage("path planning")),
                    }
                }
            };
            out.fallback_edges += fallback as usize;
            out.samples_before.push(field.samples().len());
            let (_, samples) = traverse_and_detect(&path, &scenario.unknown, &mut discovered, &scenario.hazard, rng);
            field.push_samples(&samples);
            out.samples.push(samples);
            t = path.tf();
            v_in = Some(vf);
            paths.push(path);
        }
        offset += ve.len();
        out.paths.push(paths);
    }
    out.discovered = discovered;
    out.field = field;
    Ok(out)
}

/// The three planners on a single route edge, as seen by the optimized run.
#[derive(Debug, Clone)]
pub struct EdgeComparison {
    /// Index into the route's edge list.
    pub edge: usize,
    /// The edge problem with the samples of the earlier optimized edges.
    pub problem: EdgePlanningProblem,
    /// Optimized, lawnmower and straight paths with their `Gamma`.
    pub paths: Vec<(Method, SplinePath, f64)>,
}

/// Flies `route` with the optimized planner and compares the planners on edge `edge`.
pub fn compare_edge(
    scenario: &Scenario,
    route: &Route,
    edge: usize,
    settings: &PipelineSettings,
) -> Result<EdgeComparison> {
    let edges = route_edges(route);
    if edge >= edges.len() {
        return Err(Error::param(format!(
            "edge {edge} out of range (route has {})",
            edges.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(scenario.seed, &[4]));
    let flown = fly_route(scenario, route, Method::Optimized, settings, &mut rng)?;
    let (mut m, mut k) = (0, edge);
    while k >= flown.paths[m].len() {
        k -= flown.paths[m].len();
        m += 1;
    }
    let ve = route.vehicle_edges(m);
    let e = ve[k];
    let v_nom = settings.bounds.v_nominal();
    let (v0, vf) = (e.direction() * v_nom, ve.get(k + 1).unwrap_or(&e).direction() * v_nom);
    let budget = flown.budgets[m][k];
    let optimized = flown.paths[m][k].clone();
    let t0 = optimized.t0();
    let mut field = HazardField::new(scenario.known.clone(), scenario.hazard)?;
    field.push_samples(&flown.field.samples()[..flown.samples_before[edge]]);
    let sv = build_segment_voronoi(&edges, &scenario.domain, settings.voronoi_resolution)?;
    let problem = EdgePlanningProblem {
        start: e.a(),
        end: e.b(),
        v0,
        vf,
        bounds: settings.bounds,
        budget,
        grid: evaluation_grid(&sv, edge, settings.eval_points_per_side),
        field,
    };
    let opt = &settings.optimizer;
    let lawnmower = lawnmower_spline(e.a(), e.b(), v0, vf, budget, scenario.hazard.beta_sense, v_nom, t0, opt)?;
    let straight = straight_spline(e.a(), e.b(), v_nom, t0, opt.degree)?;
    let mut paths = Vec::with_capacity(3);
    for (method, path) in [
        (Method::Optimized, optimized),
        (Method::Lawnmower, lawnmower),
        (Method::Straight, straight),
    ] {
        let g = objective_gamma(&path, &problem)?;
        paths.push((method, path, g));
    }
    Ok(EdgeComparison { edge, problem, paths })
}

/// Metrics of one method on one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub method: Method,
    pub n_known: usize,
    /// Pseudo-nodes in the route that was flown or measured.
    pub n_pseudo: usize,
    pub ecr: f64,
    pub edv: f64,
    /// Hazards found in flight; path methods only.
    pub discovered: Option<usize>,
    pub n_unknown: usize,
    pub route_length: f64,
    /// Flown arc length for path methods, route length otherwise.
    pub path_length: f64,
    pub fallback_edges: usize,
    pub wall_time_s: f64,
}

impl TrialResult {
    /// Discovered hazards as a fraction of the unknown hazards.
    pub fn discovery_rate(&self) -> Option<f64> {
        self.discovered.map(|d| {
            if self.n_unknown == 0 {
                0.0
            } else {
                d as f64 / self.n_unknown as f64
            }
        })
    }
}

/// Everything a trial produced, for inspection and plotting.
#[derive(Debug, Clone)]
pub struct TrialOutput {
    pub results: Vec<TrialResult>,
    pub original: Route,
    pub node_cvt: Option<AugmentedRoute>,
    pub edge_cvt: Option<AugmentedRoute>,
    pub flown: Vec<FlownRoute>,
}

/// Runs the requested methods on `scenario`, one result per method in the
/// order given (duplicates ignored).
///
/// Path methods fly the edge-CVT route, or the original route when the
/// scenario asks for no pseudo-nodes.
pub fn run_pipeline(scenario: &Scenario, methods: &[Method], settings: &PipelineSettings) -> Result<TrialOutput> {
    settings.validate()?;
    let mut order: Vec<Method> = Vec::new();
    for &m in methods {
        if !order.contains(&m) {
            order.push(m);
        }
    }
    let grid = Grid::new(
        scenario.domain,
        settings.metrics_resolution,
        settings.metrics_resolution,
    )?;
    let n_known = scenario.known.len();
    let n_unknown = scenario.unknown.len();

    let clock = Instant::now();
    let nodes = scenario.known_nodes()?;
    let original =
        solve_vrp(&nodes, &scenario.fleet, &settings.vrp(scenario.seed)).map_err(|e| e.in_stage("routing"))?;
    let t_original = clock.elapsed().as_secs_f64();

    let route_result = |method: Method, route: &Route, n_pseudo: usize, wall: f64| {
        let cov = edge_coverage(&route_edges(route), &grid);
        TrialResult {
            method,
            n_known,
            n_pseudo,
            ecr: cov.ecr,
            edv: cov.edv,
            discovered: None,
            n_unknown,
            route_length: route.total_length(),
            path_length: route.total_length(),
            fallback_edges: 0,
            wall_time_s: wall,
        }
    };

    let mut node_cvt = None;
    let mut t_node = 0.0;
    if order.contains(&Method::NodeCvt) {
        let clock = Instant::now();
        node_cvt = Some(augment_route(scenario, &original, false, settings)?);
        t_node = t_original + clock.elapsed().as_secs_f64();
    }
    let mut edge_cvt = None;
    let mut t_edge = 0.0;
    let needs_edge = order.iter().any(|m| *m == Method::EdgeCvt || m.is_path());
    if needs_edge && (scenario.n_pseudo() > 0 || order.contains(&Method::EdgeCvt)) {
        let clock = Instant::now();
        edge_cvt = Some(augment_route(scenario, &original, true, settings)?);
        t_edge = t_original + clock.elapsed().as_secs_f64();
    }
    let (fly, fly_pseudo) = match &edge_cvt {
        Some(a) => (&a.route, a.pseudo.len()),
        None => (&original, 0),
    };

    let mut results = Vec::with_capacity(order.len());
    let mut flown = Vec::new();
    for &method in &order {
        let r = match method {
            Method::Original => route_result(method, &original, 0, t_original),
            Method::NodeCvt => {
                let a = node_cvt.as_ref().expect("node CVT computed");
                route_result(method, &a.route, a.pseudo.len(), t_node)
            }
            Method::EdgeCvt => {
                let a = edge_cvt.as_ref().expect("edge CVT computed");
                route_result(method, &a.route, a.pseudo.len(), t_edge)
            }
            _ => {
                let clock = Instant::now();
                let tag = Method::ALL.iter().position(|m| *m == method).unwrap() as u64;
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(scenario.seed, &[2, tag]));
                let f = fly_route(scenario, fly, method, settings, &mut rng)?;
                let mut r = route_result(method, fly, fly_pseudo, t_edge + clock.elapsed().as_secs_f64());
                r.discovered = Some(f.discovered_count());
                r.path_length = f.length();
                r.fallback_edges = f.fallback_edges;
                flown.push(f);
                r
            }
        };
        results.push(r);
    }
    Ok(TrialOutput {
        results,
        original,
        node_cvt,
        edge_cvt,
        flown,
    })
}

/// A sweep axis: explicit cells, or a value drawn per trial from `min..=max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Axis {
    Values(Vec<usize>),
    Range { min: usize, max: usize },
}

impl Axis {
    fn validate(&self, name: &str) -> Result<()> {
        match self {
            Axis::Values(v) if v.is_empty() => Err(Error::param(format!("{name} axis has no values"))),
            Axis::Range { min, max } if min > max => {
                Err(Error::param(format!("{name} axis range {min}..={max} is empty")))
            }
            _ => Ok(()),
        }
    }

    /// Cell labels; a range axis is a single unlabelled cell.
    pub fn cells(&self) -> Vec<Option<usize>> {
        match self {
            Axis::Values(v) => v.iter().map(|&x| Some(x)).collect(),
            Axis::Range { .. } => vec![None],
        }
    }

    fn pick(&self, cell: Option<usize>, rng: &mut impl Rng) -> usize {
        match (cell, self) {
            (Some(v), _) => v,
            (None, Axis::Range { min, max }) => rng.random_range(*min..=*max),
            (None, Axis::Values(v)) => v[0],
        }
    }
}

/// Trials per cell of the known-node by pseudo-node grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub trials: usize,
    pub seed: u64,
    pub known: Axis,
    pub pseudo: Axis,
    pub methods: Vec<Method>,
    /// Trials slower than this are flagged, not aborted.
    pub timeout_s: f64,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            trials: 20,
            seed: 0,
            known: Axis::Values(vec![5, 10, 15]),
            pseudo: Axis::Values(vec![0, 1, 2, 3]),
            methods: vec![Method::Optimized, Method::Lawnmower, Method::Straight],
            timeout_s: 60.0,
        }
    }
}

/// Identifies one trial; `seed` fixes its scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialKey {
    pub cell_known: Option<usize>,
    pub cell_pseudo: Option<usize>,
    pub trial: usize,
    pub seed: u64,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::param("sweep needs at least one trial"));
        }
        if self.methods.is_empty() {
            return Err(Error::param("sweep needs at least one method"));
        }
        if !(self.timeout_s > 0.0) {
            return Err(Error::param("trial timeout must be positive"));
        }
        self.known.validate("known")?;
        self.pseudo.validate("pseudo")?;
        if let Axis::Values(v) = &self.known {
            if v.contains(&0) {
                return Err(Error::param("known axis values must be positive"));
            }
        }
        if let Axis::Range { min: 0, .. } = self.known {
            return Err(Error::param("known axis values must be positive"));
        }
        Ok(())
    }

    /// All trials, ordered by known cell, pseudo cell, then trial. The seed
    /// ignores the pseudo cell, so every pseudo count sees the same scenarios.
    pub fn keys(&self) -> Vec<TrialKey> {
        let mut keys = Vec::new();
        for ck in self.known.cells() {
            for cp in self.pseudo.cells() {
                for trial in 0..self.trials {
                    let tag = ck.map_or(u64::MAX, |v| v as u64);
                    keys.push(TrialKey {
                        cell_known: ck,
                        cell_pseudo: cp,
                        trial,
                        seed: derive_seed(self.seed, &[tag, trial as u64]),
                    });
                }
            }
        }
        keys
    }

    /// Scenario of `key`, with range axes drawn from the key's seed.
    pub fn scenario(&self, key: &TrialKey, base: &ScenarioSpec) -> Result<Scenario> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(key.seed, &[3]));
        let n_known = self.known.pick(key.cell_known, &mut rng);
        let n_pseudo = self.pseudo.pick(key.cell_pseudo, &mut rng);
        let spec = ScenarioSpec {
            n_known,
            cvt: CvtConfig {
                n_pseudo,
                ..base.cvt.clone()
            },
            ..base.clone()
        };
        generate_scenario(&spec, key.seed)
    }
}

/// Outcome of one sweep trial.
#[derive(Debug, Clone)]
pub struct TrialRecord {
    pub key: TrialKey,
    pub outcome: std::result::Result<Vec<TrialResult>, Error>,
    pub wall_time_s: f64,
    pub timed_out: bool,
}

pub fn run_trial(
    sweep: &SweepSpec,
    key: &TrialKey,
    base: &ScenarioSpec,
    settings: &PipelineSettings,
) -> Result<TrialOutput> {
    let scenario = sweep.scenario(key, base).map_err(|e| e.in_stage("scenario"))?;
    run_pipeline(&scenario, &sweep.methods, settings)
}

/// Runs every trial of the sweep on `jobs` threads; records come back in key order.
///
/// `on_record` sees each record as it completes, one at a time. With
/// `stop_on_error`, no new trials start after a failure and the unstarted
/// ones are left out.
pub fn run_sweep(
    sweep: &SweepSpec,
    base: &ScenarioSpec,
    settings: &PipelineSettings,
    jobs: usize,
    stop_on_error: bool,
    on_record: &(dyn Fn(&TrialRecord) + Sync),
) -> Result<Vec<TrialRecord>> {
    use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
    use std::sync::Mutex;

    sweep.validate()?;
    base.validate()?;
    settings.validate()?;
    let keys = sweep.keys();
    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let slots: Mutex<Vec<Option<TrialRecord>>> = Mutex::new(vec![None; keys.len()]);
    std::thread::scope(|s| {
        for _ in 0..jobs.max(1).min(keys.len()) {
            s.spawn(|| loop {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(key) = keys.get(i) else { break };
                let clock = Instant::now();
                let outcome = run_trial(sweep, key, base, settings).map(|o| o.results);
                let wall = clock.elapsed().as_secs_f64();
                if outcome.is_err() && stop_on_error {
                    stop.store(true, Ordering::SeqCst);
                }
                let rec = TrialRecord {
                    key: *key,
                    outcome,
                    wall_time_s: wall,
                    timed_out: wall > sweep.timeout_s,
                };
                let mut slots = slots.lock().unwrap_or_else(|e| e.into_inner());
                on_record(&rec);
                slots[i] = Some(rec);
            });
        }
    });
    Ok(slots
        .into_inner()
        .unwrap_or_else(|e| e.into_inner())
        .into_iter()
        .flatten()
        .collect())
}
