//! Per-edge trajectory optimisation.
//!
//! Minimises `Gamma`, the mean posterior probability of an undiscovered
//! hazard over a set of evaluation points, over the control points of a
//! B-spline and its duration. Endpoint positions and velocities are imposed
//! exactly by solving for two control points at each end; speed, turn-rate
//! and curvature bounds at the sample times and the path-length budget are
//! handled by an augmented Lagrangian around an L-BFGS inner solver.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hazard::{posterior_from_logs, HazardField};
use crate::lbfgs::{self, LbfgsConfig};
use crate::spline::{sample_times, BasisEval, SplinePath};
use crate::Point2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KinematicBounds {
    /// Speed bounds, m/s.
    pub v_lb: f64,
    pub v_ub: f64,
    /// Turn-rate bounds, rad/s.
    pub u_lb: f64,
    pub u_ub: f64,
    /// Curvature bound on `|kappa|`, 1/m.
    pub kappa_ub: f64,
}

impl Default for KinematicBounds {
    fn default() -> Self {
        Self {
            v_lb: 2.0,
            v_ub: 20.0,
            u_lb: -1.0,
            u_ub: 1.0,
            kappa_ub: 0.2,
        }
    }
}

impl KinematicBounds {
    pub fn validate(&self) -> Result<()> {
        if !(self.v_lb > 0.0 && self.v_lb < self.v_ub && self.v_ub.is_finite()) {
            return Err(Error::param("speed bounds need 0 < v_lb < v_ub"));
        }
        if !(self.u_lb < 0.0 && self.u_ub > 0.0) {
            return Err(Error::param("turn-rate bounds need u_lb < 0 < u_ub"));
        }
        if !(self.kappa_ub > 0.0) {
            return Err(Error::param("curvature bound must be positive"));
        }
        Ok(())
    }

    /// Midpoint of the speed bounds.
    pub fn v_nominal(&self) -> f64 {
        0.5 * (self.v_lb + self.v_ub)
    }
}

/// Acceptance thresholds for a planned trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Endpoint position error, m.
    pub position: f64,
    /// Endpoint velocity error, m/s.
    pub velocity: f64,
    /// Relative violation of the speed, turn-rate and curvature bounds.
    pub kinematic: f64,
    /// Relative arc-length error against the budget.
    pub budget: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            position: 0.5,
            velocity: 0.1,
            kinematic: 1e-3,
            budget: 5e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub degree: usize,
    /// Budget meters per control point.
    pub control_spacing: f64,
    pub min_control: usize,
    pub max_outer: usize,
    /// Extra outer iterations allowed while no iterate is feasible yet.
    pub rescue_outer: usize,
    pub max_inner_iter: usize,
    pub max_inner_evals: usize,
    pub rho0: f64,
    pub rho_growth: f64,
    pub objective_weight: f64,
    /// Sample/evaluation-point pairs with `beta_sense * d^2` above this are
    /// skipped inside the solver (reported values are always exact).
    pub cutoff: f64,
    /// Stop once a feasible outer iterate changes `Gamma` by less than this, relative.
    pub settle_tol: f64,
    pub tolerances: Tolerances,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            degree: 3,
            control_spacing: 15.0,
            min_control: 8,
            max_outer: 6,
            rescue_outer: 12,
            max_inner_iter: 30,
            max_inner_evals: 60,
            rho0: 100.0,
            rho_growth: 10.0,
            objective_weight: 10.0,
            cutoff: 25.0,
            settle_tol: 1e-3,
            tolerances: Tolerances::default(),
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(2..=crate::spline::MAX_DEGREE).contains(&self.degree) {
            return Err(Error::param("optimizer needs a spline degree in 2..=5"));
        }
        if !(self.control_spacing > 0.0) || self.max_outer == 0 || self.max_inner_iter == 0 {
            return Err(Error::param("optimizer iteration limits and spacing must be positive"));
        }
        if !(self.rho0 > 0.0 && self.rho_growth >= 1.0 && self.objective_weight > 0.0) {
            return Err(Error::param("invalid penalty settings"));
        }
        Ok(())
    }

    /// Control points for a budget of `budget` meters.
    pub fn n_control(&self, budget: f64) -> usize {
        let by_length = (budget / self.control_spacing).ceil() as usize;
        by_length.max(self.min_control).max(2 * self.degree + 2)
    }
}

#[derive(Debug, Clone)]
pub struct EdgePlanningProblem {
    pub start: Point2,
    pub end: Point2,
    /// Required velocity vectors at the ends, m/s.
    pub v0: Point2,
    pub vf: Point2,
    pub bounds: KinematicBounds,
    /// Path-length budget, m.
    pub budget: f64,
    /// Evaluation points `X_g` in the edge's Voronoi cell.
    pub grid: Vec<Point2>,
    /// Known hazards and the samples already taken on earlier edges.
    pub field: HazardField,
}

impl EdgePlanningProblem {
    pub fn validate(&self) -> Result<()> {
        self.bounds.validate()?;
        let slack = 1e-9 * self.bounds.v_ub;
        for v in [self.v0, self.vf] {
            let s = v.norm();
            if s < self.bounds.v_lb - slack || s > self.bounds.v_ub + slack {
                return Err(Error::param(format!(
                    "end speed {s} outside [{}, {}]",
                    self.bounds.v_lb, self.bounds.v_ub
                )));
            }
        }
        let d = self.start.dist(self.end);
        if !(self.budget >= d * (1.0 - 1e-9)) || !self.budget.is_finite() {
            return Err(Error::param(format!(
                "budget {} is shorter than the edge ({d})",
                self.budget
            )));
        }
        if self.grid.is_empty() {
            return Err(Error::param("no evaluation points"));
        }
        Ok(())
    }

    pub fn delta_s(&self) -> f64 {
        self.field.params().delta_s
    }
}

/// Largest violation of each constraint family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintResiduals {
    pub start_position: f64,
    pub end_position: f64,
    pub start_velocity: f64,
    pub end_velocity: f64,
    /// Relative, at the sample times.
    pub speed: f64,
    pub turn_rate: f64,
    pub curvature: f64,
    /// `|L - B| / B`.
    pub budget: f64,
}

impl ConstraintResiduals {
    pub fn within(&self, tol: &Tolerances) -> bool {
        self.start_position <= tol.position
            && self.end_position <= tol.position
            && self.start_velocity <= tol.velocity
            && self.end_velocity <= tol.velocity
            && self.speed <= tol.kinematic
            && self.turn_rate <= tol.kinematic
            && self.curvature <= tol.kinematic
            && self.budget <= tol.budget
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PlanStatus {
    /// A feasible improvement (or the feasible initial path) was returned.
    Converged,
    /// Iteration limit hit; best feasible iterate returned.
    MaxIterations,
    /// No feasible iterate was found; the least-violating one is returned.
    Infeasible,
}

#[derive(Debug, Clone)]
pub struct PlannedTrajectory {
    pub path: SplinePath,
    pub gamma: f64,
    pub gamma_init: f64,
    pub residuals: ConstraintResiduals,
    pub sample_times: Vec<f64>,
    pub status: PlanStatus,
    /// True when the initial path was kept because no iterate improved on it.
    pub kept_init: bool,
    pub outer_iterations: usize,
    pub evaluations: usize,
}

impl PlannedTrajectory {
    pub fn tf(&self) -> f64 {
        self.path.tf()
    }

    pub fn sample_points(&self) -> Vec<Point2> {
        sample_points(&self.path, &self.sample_times)
    }
}

fn sample_points(path: &SplinePath, times: &[f64]) -> Vec<Point2> {
    times
        .iter()
        .map(|&t| path.combine(&path.basis_unchecked(t.min(path.tf()), 0), 0))
        .collect()
}

/// Sampling instants `t0, t0 + delta_s, ...` of a path.
pub fn path_sample_times(path: &SplinePath, delta_s: f64) -> Vec<f64> {
    sample_times(path.t0(), path.tf(), delta_s)
}

/// Posterior model over the evaluation points with the past samples folded in.
#[derive(Debug, Clone)]
struct GridModel {
    xs: Vec<f64>,
    ys: Vec<f64>,
    ln_clear_prior: Vec<f64>,
    past_log_miss: Vec<f64>,
    n_past: usize,
    beta: f64,
    log_q: f64,
    cutoff: f64,
}

impl GridModel {
    fn new(grid: &[Point2], field: &HazardField, cutoff: f64) -> Result<Self> {
        if grid.is_empty() {
            return Err(Error::param("no evaluation points"));
        }
        let p = field.params();
        Ok(Self {
            xs: grid.iter().map(|g| g.x).collect(),
            ys: grid.iter().map(|g| g.y).collect(),
            ln_clear_prior: grid.iter().map(|&g| field.ln_clear_prior(g)).collect(),
            past_log_miss: grid.iter().map(|&g| field.log_miss_likelihood(g)).collect(),
            n_past: field.samples().len(),
            beta: p.beta_sense,
            log_q: (1.0 - p.p_fa).ln(),
            cutoff,
        })
    }

    fn with_cutoff(&self, cutoff: f64) -> Self {
        Self { cutoff, ..self.clone() }
    }

    fn path_gamma(&self, path: &SplinePath, delta_s: f64) -> Result<f64> {
        self.gamma(&sample_points(path, &path_sample_times(path, delta_s)), None)
    }

    /// Mean posterior after the new `samples`; writes `dGamma/ds_j` into `grad` if given.
    fn gamma(&self, samples: &[Point2], mut grad: Option<&mut [Point2]>) -> Result<f64> {
        let ng = self.xs.len();
        let n = self.n_past + samples.len();
        let log_clear = if n == 0 { 0.0 } else { n as f64 * self.log_q };
        let sx: Vec<f64> = samples.iter().map(|s| s.x).collect();
        let sy: Vec<f64> = samples.iter().map(|s| s.y).collect();
        // e^{-r} and 1 - e^{-r} per sample
        let mut e = vec![0.0; samples.len()];
        let mut m = vec![1.0; samples.len()];
        if let Some(g) = grad.as_deref_mut() {
            g.iter_mut().for_each(|v| *v = Point2::zero());
        }
        let mut total = 0.0;
        for i in 0..ng {
            let (gx, gy) = (self.xs[i], self.ys[i]);
            let mut log_miss = self.past_log_miss[i];
            for j in 0..sx.len() {
                let dx = sx[j] - gx;
                let dy = sy[j] - gy;
                let r = self.beta * (dx * dx + dy * dy);
                if r <= self.cutoff {
                    e[j] = (-r).exp();
                    m[j] = if r < LN_2 { -(-r).exp_m1() } else { 1.0 - e[j] };
                    log_miss += ln_one_minus(r, e[j], m[j]);
                } else {
                    e[j] = 0.0;
                }
            }
            let phi = posterior_from_logs(self.ln_clear_prior[i], log_miss, log_clear)?;
            total += phi;
            if let Some(g) = grad.as_deref_mut() {
                let w = phi * (1.0 - phi) / ng as f64;
                if w == 0.0 {
                    continue;
                }
                let two_beta = 2.0 * self.beta;
                for j in 0..sx.len() {
                    if e[j] > 0.0 {
                        let c = w * two_beta * e[j] / m[j];
                        g[j].x += c * (sx[j] - gx);
                        g[j].y += c * (sy[j] - gy);
                    }
                }
            }
        }
        Ok(total / ng as f64)
    }
}

/// `ln(1 - e^{-r})` given `e = e^{-r}` and `m = 1 - e`, with a short series where `e` is tiny.
fn ln_one_minus(r: f64, e: f64, m: f64) -> f64 {
    if e < 1e-4 {
        -e * (1.0 + e * (0.5 + e / 3.0))
    } else if r < LN_2 {
        m.ln()
    } else {
        (-e).ln_1p()
    }
}

/// `Gamma` for a path: the mean posterior over the evaluation points after
/// sampling at `t0, t0 + delta_s, ...` along it.
pub fn objective_gamma(path: &SplinePath, problem: &EdgePlanningProblem) -> Result<f64> {
    let pts = sample_points(path, &path_sample_times(path, problem.delta_s()));
    gamma_with_samples(problem, &pts)
}

/// `Gamma` after an explicit set of new samples.
pub fn gamma_with_samples(problem: &EdgePlanningProblem, samples: &[Point2]) -> Result<f64> {
    GridModel::new(&problem.grid, &problem.field, f64::INFINITY)?.gamma(samples, None)
}

/// Gradient of [`objective_gamma`] with respect to the control points and `t_f`.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaGradient {
    pub control: Vec<Point2>,
    pub tf: f64,
}

/// Exact gradient of [`objective_gamma`] at a fixed sample count.
///
/// The number of samples changes discretely with `t_f`; the derivative is
/// that of the branch containing `t_f`.
pub fn gradient_gamma(path: &SplinePath, problem: &EdgePlanningProblem) -> Result<GammaGradient> {
    let model = GridModel::new(&problem.grid, &problem.field, f64::INFINITY)?;
    let times = path_sample_times(path, problem.delta_s());
    let basis: Vec<BasisEval<f64>> = times
        .iter()
        .map(|&t| path.basis_unchecked(t.min(path.tf()), 1))
        .collect();
    let pts: Vec<Point2> = basis.iter().map(|b| path.combine(b, 0)).collect();
    let mut ds = vec![Point2::zero(); pts.len()];
    model.gamma(&pts, Some(&mut ds))?;
    let mut control = vec![Point2::zero(); path.control().len()];
    let mut tf = 0.0;
    let (t0, dur) = (path.t0(), path.duration());
    for ((b, t), g) in basis.iter().zip(&times).zip(&ds) {
        for k in 0..b.count {
            control[b.first + k] = control[b.first + k] + *g * b.ders[0][k];
        }
        // the sample sits at fixed t while the curve stretches with t_f:
        // with tau = (t - t0) / T, dp/dT = p'(t) * (-(t - t0) / T)
        let vel = path.combine(b, 1);
        tf += g.dot(vel) * (-(t - t0) / dur);
    }
    Ok(GammaGradient { control, tf })
}

/// Recomputes every constraint residual of `path` from scratch.
pub fn verify_trajectory(path: &SplinePath, problem: &EdgePlanningProblem) -> Result<ConstraintResiduals> {
    let b = &problem.bounds;
    let (p0, pf) = (path.eval(path.t0())?, path.eval(path.tf())?);
    let (v0, _) = path.derivatives(path.t0())?;
    let (vf, _) = path.derivatives(path.tf())?;
    let mut speed = 0.0f64;
    let mut turn = 0.0f64;
    let mut curv = 0.0f64;
    for t in path_sample_times(path, problem.delta_s()) {
        match path.kinematics(t) {
            Ok(k) => {
                speed = speed.max((b.v_lb - k.v) / b.v_lb).max((k.v - b.v_ub) / b.v_ub);
                turn = turn.max((k.u - b.u_ub) / b.u_ub).max((b.u_lb - k.u) / -b.u_lb);
                curv = curv.max((k.kappa.abs() - b.kappa_ub) / b.kappa_ub);
            }
            Err(Error::DegenerateVelocity(_)) => {
                speed = speed.max(1.0);
                turn = f64::INFINITY;
                curv = f64::INFINITY;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(ConstraintResiduals {
        start_position: p0.dist(problem.start),
        end_position: pf.dist(problem.end),
        start_velocity: v0.dist(problem.v0),
        end_velocity: vf.dist(problem.vf),
        speed: speed.max(0.0),
        turn_rate: turn.max(0.0),
        curvature: curv.max(0.0),
        budget: (path.arc_length() - problem.budget).abs() / problem.budget,
    })
}

/// Two control points at one end solved from the position and velocity conditions.
#[derive(Debug, Clone)]
struct EndElimination {
    dep: [usize; 2],
    minv: [[f64; 2]; 2],
    /// `(j, M^-1 k_j)` for the other active control points.
    others: Vec<(usize, [f64; 2])>,
    pos: Point2,
    vel: Point2,
}

impl EndElimination {
    fn new(b: &BasisEval<f64>, dep: [usize; 2], pos: Point2, vel: Point2) -> Result<Self> {
        let col = |i: usize| -> [f64; 2] {
            if i >= b.first && i < b.first + b.count {
                [b.ders[0][i - b.first], b.ders[1][i - b.first]]
            } else {
                [0.0, 0.0]
            }
        };
        let (k0, k1) = (col(dep[0]), col(dep[1]));
        let det = k0[0] * k1[1] - k1[0] * k0[1];
        if det.abs() < 1e-12 {
            return Err(Error::param("endpoint conditions cannot be eliminated"));
        }
        let minv = [[k1[1] / det, -k1[0] / det], [-k0[1] / det, k0[0] / det]];
        let others = (b.first..b.first + b.count)
            .filter(|i| !dep.contains(i))
            .map(|j| {
                let k = col(j);
                (
                    j,
                    [
                        minv[0][0] * k[0] + minv[0][1] * k[1],
                        minv[1][0] * k[0] + minv[1][1] * k[1],
                    ],
                )
            })
            .collect();
        Ok(Self {
            dep,
            minv,
            others,
            pos,
            vel,
        })
    }

    fn apply(&self, c: &mut [Point2], t: f64) {
        let vt = self.vel * t;
        for a in 0..2 {
            let mut v = self.pos * self.minv[a][0] + vt * self.minv[a][1];
            for (j, e) in &self.others {
                v = v - c[*j] * e[a];
            }
            c[self.dep[a]] = v;
        }
    }

    /// Moves the gradient held by the dependent points onto the free ones and `T`.
    fn pull_back(&self, gc: &mut [Point2]) -> f64 {
        let mut gt = 0.0;
        for a in 0..2 {
            let g = gc[self.dep[a]];
            for (j, e) in &self.others {
                gc[*j] = gc[*j] - g * e[a];
            }
            gt += g.dot(self.vel) * self.minv[a][1];
            gc[self.dep[a]] = Point2::zero();
        }
        gt
    }
}

/// Which inequality family a multiplier belongs to.
const N_INEQ: usize = 6;

struct Solver<'a> {
    problem: &'a EdgePlanningProblem,
    cfg: &'a OptimizerConfig,
    model: GridModel,
    /// Unit-horizon spline used for basis evaluation.
    proto: SplinePath,
    free: Vec<usize>,
    ends: [EndElimination; 2],
    quad: Vec<(BasisEval<f64>, f64)>,
    /// Basis at the objective's sample parameters, frozen at the initial horizon.
    obj_basis: Vec<BasisEval<f64>>,
    /// Basis at the kinematic check parameters; fixed during an inner solve so the
    /// merit stays smooth in `t`, re-anchored to the sampling instants between solves.
    con_basis: Vec<BasisEval<f64>>,
    delta_s: f64,
    t_scale: f64,
    gamma_scale: f64,
    mu: Vec<[f64; N_INEQ]>,
    lambda: f64,
    rho: f64,
}

/// Constraint values at one point of the search.
struct Violations {
    kinematic: f64,
    budget: f64,
    ineq: Vec<[f64; N_INEQ]>,
    h: f64,
}

impl<'a> Solver<'a> {
    fn new(
        problem: &'a EdgePlanningProblem,
        cfg: &'a OptimizerConfig,
        exact: &GridModel,
        n: usize,
        t_init: f64,
    ) -> Result<Self> {
        let p = cfg.degree;
        let proto = SplinePath::new(p, vec![Point2::zero(); n], 0.0, 1.0)?;
        let start = EndElimination::new(&proto.basis_unchecked(0.0, 1), [0, 1], problem.start, problem.v0)?;
        let end = EndElimination::new(&proto.basis_unchecked(1.0, 1), [n - 2, n - 1], problem.end, problem.vf)?;
        let free = (2..n - 2).collect();
        let quad = proto
            .quadrature()
            .into_iter()
            .map(|(t, w)| (proto.basis_unchecked(t, 1), w))
            .collect();
        let model = exact.with_cutoff(cfg.cutoff);
        let gamma_scale = model.gamma(&[], None)?.max(1e-12);
        let delta_s = problem.delta_s();
        let n_obj = (t_init / delta_s + 1e-9).floor() as usize;
        let obj_basis = (0..=n_obj)
            .map(|j| proto.basis_unchecked((j as f64 * delta_s / t_init).min(1.0), 0))
            .collect();
        let mut solver = Self {
            problem,
            cfg,
            model,
            proto,
            free,
            ends: [start, end],
            quad,
            obj_basis,
            con_basis: Vec::new(),
            delta_s,
            t_scale: problem.bounds.v_nominal(),
            gamma_scale,
            mu: Vec::new(),
            lambda: 0.0,
            rho: cfg.rho0,
        };
        solver.anchor_checks(t_init);
        Ok(solver)
    }

    /// Places the kinematic checks at the sampling instants of a path lasting `t`.
    fn anchor_checks(&mut self, t: f64) {
        let n = (t / self.delta_s + 1e-9).floor() as usize;
        self.con_basis = (0..=n)
            .map(|j| self.proto.basis_unchecked((j as f64 * self.delta_s / t).min(1.0), 2))
            .collect();
        self.mu.resize(n + 1, [0.0; N_INEQ]);
    }

    fn n_control(&self) -> usize {
        self.proto.control().len()
    }

    fn encode(&self, control: &[Point2], t: f64) -> Vec<f64> {
        let mut x = Vec::with_capacity(2 * self.free.len() + 1);
        for &i in &self.free {
            x.push(control[i].x);
            x.push(control[i].y);
        }
        x.push(t * self.t_scale);
        x
    }

    fn decode(&self, x: &[f64]) -> (Vec<Point2>, f64) {
        let t = x[x.len() - 1] / self.t_scale;
        let mut c = vec![Point2::zero(); self.n_control()];
        for (k, &i) in self.free.iter().enumerate() {
            c[i] = Point2::new(x[2 * k], x[2 * k + 1]);
        }
        for e in &self.ends {
            e.apply(&mut c, t);
        }
        (c, t)
    }

    fn to_path(&self, control: Vec<Point2>, t0: f64, t: f64) -> Result<SplinePath> {
        SplinePath::new(self.cfg.degree, control, t0, t0 + t)
    }

    /// Augmented-Lagrangian merit and its gradient in the reduced variables.
    fn merit(&mut self, x: &[f64], grad: &mut [f64]) -> f64 {
        let (c, t) = self.decode(x);
        if !(t > 0.0) || !t.is_finite() {
            return f64::INFINITY;
        }
        let mut gc = vec![Point2::zero(); c.len()];
        let mut gt = 0.0;

        // objective over the frozen sample pattern
        let pts: Vec<Point2> = self.obj_basis.iter().map(|b| combine(b, &c, 0)).collect();
        let mut ds = vec![Point2::zero(); pts.len()];
        let gamma = match self.model.gamma(&pts, Some(&mut ds)) {
            Ok(g) => g,
            Err(_) => return f64::INFINITY,
        };
        let w = self.cfg.objective_weight / self.gamma_scale;
        let mut f = w * gamma;
        for (b, g) in self.obj_basis.iter().zip(&ds) {
            let g = *g * w;
            for k in 0..b.count {
                gc[b.first + k] = gc[b.first + k] + g * b.ders[0][k];
            }
        }

        // kinematic inequalities
        let bd = self.problem.bounds;
        let rho = self.rho;
        let u_scale = bd.u_ub.max(-bd.u_lb);
        for (j, b) in self.con_basis.iter().enumerate() {
            let q1 = combine(b, &c, 1);
            let q2 = combine(b, &c, 2);
            let s = q1.norm();
            if s < 1e-9 {
                return f64::INFINITY;
            }
            let cr = q1.cross(q2);
            let v = s / t;
            let kappa = cr / (s * s * s);
            let u = kappa * v;
            let g = [
                (bd.v_lb - v) / bd.v_lb,
                (v - bd.v_ub) / bd.v_ub,
                (u - bd.u_ub) / u_scale,
                (bd.u_lb - u) / u_scale,
                (kappa - bd.kappa_ub) / bd.kappa_ub,
                (-kappa - bd.kappa_ub) / bd.kappa_ub,
            ];
            let mu = &self.mu[j];
            let mut psi = [0.0; N_INEQ];
            let mut any = false;
            for k in 0..N_INEQ {
                psi[k] = (mu[k] + rho * g[k]).max(0.0);
                f += (psi[k] * psi[k] - mu[k] * mu[k]) / (2.0 * rho);
                any |= psi[k] > 0.0;
            }
            if !any {
                continue;
            }
            let gv = psi[1] / bd.v_ub - psi[0] / bd.v_lb;
            let gu = (psi[2] - psi[3]) / u_scale;
            let gk = (psi[4] - psi[5]) / bd.kappa_ub;

            let s2 = s * s;
            let dcr1 = Point2::new(q2.y, -q2.x);
            let dcr2 = Point2::new(-q1.y, q1.x);
            let dv_dq1 = q1 / (s * t);
            let dk_dq1 = dcr1 / (s2 * s) - q1 * (3.0 * cr / (s2 * s2 * s));
            let dk_dq2 = dcr2 / (s2 * s);
            let du_dq1 = dcr1 / (s2 * t) - q1 * (2.0 * cr / (s2 * s2 * t));
            let du_dq2 = dcr2 / (s2 * t);
            let g1 = dv_dq1 * gv + du_dq1 * gu + dk_dq1 * gk;
            let g2 = du_dq2 * gu + dk_dq2 * gk;
            for k in 0..b.count {
                gc[b.first + k] = gc[b.first + k] + g1 * b.ders[1][k] + g2 * b.ders[2][k];
            }
            gt -= (gv * v + gu * u) / t;
        }

        // path budget
        let budget = self.problem.budget;
        let mut len = 0.0;
        for (b, wq) in &self.quad {
            len += combine(b, &c, 1).norm() * wq;
        }
        let h = (len - budget) / budget;
        f += self.lambda * h + 0.5 * rho * h * h;
        let dh = (self.lambda + rho * h) / budget;
        for (b, wq) in &self.quad {
            let q1 = combine(b, &c, 1);
            let s = q1.norm();
            if s == 0.0 {
                continue;
            }
            let g = q1 * (dh * wq / s);
            for k in 0..b.count {
                gc[b.first + k] = gc[b.first + k] + g * b.ders[1][k];
            }
        }

        for e in &self.ends {
            gt += e.pull_back(&mut gc);
        }
        for (k, &i) in self.free.iter().enumerate() {
            grad[2 * k] = gc[i].x;
            grad[2 * k + 1] = gc[i].y;
        }
        let last = grad.len() - 1;
        grad[last] = gt / self.t_scale;
        f
    }

    fn violations(&self, x: &[f64]) -> Violations {
        let (c, t) = self.decode(x);
        let bd = self.problem.bounds;
        let u_scale = bd.u_ub.max(-bd.u_lb);
        let mut ineq = Vec::new();
        let mut worst = 0.0f64;
        for b in &self.con_basis {
            let q1 = combine(b, &c, 1);
            let q2 = combine(b, &c, 2);
            let s = q1.norm().max(1e-300);
            let v = s / t;
            let kappa = q1.cross(q2) / (s * s * s);
            let u = kappa * v;
            let g = [
                (bd.v_lb - v) / bd.v_lb,
                (v - bd.v_ub) / bd.v_ub,
                (u - bd.u_ub) / u_scale,
                (bd.u_lb - u) / u_scale,
                (kappa - bd.kappa_ub) / bd.kappa_ub,
                (-kappa - bd.kappa_ub) / bd.kappa_ub,
            ];
            worst = g.iter().fold(worst, |m, &v| m.max(v));
            ineq.push(g);
        }
        let len: f64 = self.quad.iter().map(|(b, w)| combine(b, &c, 1).norm() * w).sum();
        let h = (len - self.problem.budget) / self.problem.budget;
        Violations {
            kinematic: worst.max(0.0),
            budget: h.abs(),
            ineq,
            h,
        }
    }

    fn update_multipliers(&mut self, v: &Violations) {
        for (mu, g) in self.mu.iter_mut().zip(&v.ineq) {
            for k in 0..N_INEQ {
                mu[k] = (mu[k] + self.rho * g[k]).max(0.0);
            }
        }
        self.lambda += self.rho * v.h;
    }
}

fn combine(b: &BasisEval<f64>, c: &[Point2], order: usize) -> Point2 {
    let mut acc = Point2::zero();
    for k in 0..b.count {
        acc = acc + c[b.first + k] * b.ders[order][k];
    }
    acc
}

/// Candidate returned from the search, in the caller's time frame.
struct Candidate {
    path: SplinePath,
    gamma: f64,
    residuals: ConstraintResiduals,
}

/// Solves the edge problem from `init`, never returning a feasible path
/// worse than a feasible `init`.
pub fn plan_edge(problem: &EdgePlanningProblem, init: &SplinePath, cfg: &OptimizerConfig) -> Result<PlannedTrajectory> {
    problem.validate()?;
    cfg.validate()?;
    let tol = cfg.tolerances;
    let init_len = init.arc_length();
    if (init_len - problem.budget).abs() > 0.05 * problem.budget {
        return Err(Error::InfeasibleInit {
            length: init_len,
            budget: problem.budget,
        });
    }
    let t0 = init.t0();
    let delta_s = problem.delta_s();
    let init_res = verify_trajectory(init, problem)?;
    let exact = GridModel::new(&problem.grid, &problem.field, f64::INFINITY)?;
    let init_gamma = exact.path_gamma(init, delta_s)?;
    let init_feasible = init_res.within(&tol);

    // re-express the initial guess in the solver's degree and control count
    let n = cfg.n_control(problem.budget);
    let t_init = init.duration();
    let start_path = if init.degree() == cfg.degree && init.control().len() == n {
        init.clone()
    } else {
        let pts = crate::spline::polyline_of(init, 20 * n);
        crate::spline::fit_to_polyline(
            &pts,
            cfg.degree,
            n,
            t0,
            init.tf(),
            crate::spline::EndVelocities {
                start: Some(problem.v0),
                end: Some(problem.vf),
            },
        )?
    };

    let mut solver = Solver::new(problem, cfg, &exact, n, t_init)?;
    let mut x = solver.encode(start_path.control(), t_init);
    let mut grad = vec![0.0; x.len()];
    let mut evaluations = 0;
    let mut best: Option<Candidate> = None;
    let mut fallback: Option<(f64, Candidate)> = None;
    let mut prev_viol = f64::INFINITY;
    let mut prev_gamma = f64::INFINITY;
    let mut outer = 0;
    let mut settled = false;

    let inner = LbfgsConfig {
        memory: 8,
        max_iter: cfg.max_inner_iter,
        max_evals: cfg.max_inner_evals,
        grad_tol: 1e-9,
        rel_tol: 1e-9,
    };
    // initialise multipliers from the starting point so active bounds are priced in
    solver.merit(&x, &mut grad);
    while outer < cfg.max_outer || (best.is_none() && outer < cfg.max_outer + cfg.rescue_outer) {
        outer += 1;
        let res = lbfgs::minimize(|z, g| solver_merit(&mut solver, z, g), x.clone(), &inner);
        evaluations += res.evaluations;
        if res.f.is_finite() {
            x = res.x;
        }
        let viol = solver.violations(&x);
        let (c, t) = solver.decode(&x);
        let path = solver.to_path(c, t0, t)?;
        let residuals = verify_trajectory(&path, problem)?;
        let gamma = exact.path_gamma(&path, delta_s)?;
        let cand = Candidate { path, gamma, residuals };
        if residuals.within(&tol) {
            if best.as_ref().is_none_or(|b| gamma < b.gamma) {
                best = Some(cand);
            }
        } else {
            let score = residual_score(&residuals, &tol);
            if fallback.as_ref().is_none_or(|(s, _)| score < *s) {
                fallback = Some((score, cand));
            }
        }
        let v = viol.kinematic.max(viol.budget);
        let feasible_inside = viol.kinematic <= 0.5 * tol.kinematic && viol.budget <= 0.5 * tol.budget;
        if feasible_inside && (prev_gamma - gamma).abs() <= cfg.settle_tol * gamma.max(1e-12) {
            settled = true;
            break;
        }
        prev_gamma = gamma;
        solver.update_multipliers(&viol);
        solver.anchor_checks(t);
        if v > 0.25 * prev_viol {
            solver.rho = (solver.rho * cfg.rho_growth).min(1e9);
        }
        prev_viol = v;
    }

    let status_if_found = if settled {
        PlanStatus::Converged
    } else {
        PlanStatus::MaxIterations
    };
    let (chosen, status, kept_init) = match best {
        Some(b) if !init_feasible || b.gamma <= init_gamma => (b, status_if_found, false),
        Some(_) | None if init_feasible => (
            Candidate {
                path: init.clone(),
                gamma: init_gamma,
                residuals: init_res,
            },
            PlanStatus::Converged,
            true,
        ),
        _ => {
            let f = fallback.map(|(_, c)| c).unwrap_or(Candidate {
                path: init.clone(),
                gamma: init_gamma,
                residuals: init_res,
            });
            (f, PlanStatus::Infeasible, false)
        }
    };
    let sample_times = path_sample_times(&chosen.path, delta_s);
    Ok(PlannedTrajectory {
        path: chosen.path,
        gamma: chosen.gamma,
        gamma_init: init_gamma,
        residuals: chosen.residuals,
        sample_times,
        status,
        kept_init,
        outer_iterations: outer,
        evaluations,
    })
}

fn solver_merit(s: &mut Solver<'_>, x: &[f64], g: &mut [f64]) -> f64 {
    s.merit(x, g)
}

fn residual_score(r: &ConstraintResiduals, tol: &Tolerances) -> f64 {
    [
        r.start_position / tol.position,
        r.end_position / tol.position,
        r.start_velocity / tol.velocity,
        r.end_velocity / tol.velocity,
        r.speed / tol.kinematic,
        r.turn_rate / tol.kinematic,
        r.curvature / tol.kinematic,
        r.budget / tol.budget,
    ]
    .into_iter()
    .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hazard::{HazardField, HazardParams};
    use crate::sim::{lawnmower_spline, straight_spline};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn box_grid(x0: f64, x1: f64, y0: f64, y1: f64, n: usize) -> Vec<Point2> {
        let mut g = Vec::new();
        for j in 0..n {
            for i in 0..n {
                g.push(Point2::new(
                    x0 + (i as f64 + 0.5) * (x1 - x0) / n as f64,
                    y0 + (j as f64 + 0.5) * (y1 - y0) / n as f64,
                ));
            }
        }
        g
    }

    fn problem(known: Vec<Point2>, params: HazardParams, budget: f64) -> EdgePlanningProblem {
        let start = Point2::new(200.0, 300.0);
        let end = Point2::new(500.0, 300.0);
        let v = Point2::new(11.0, 0.0);
        EdgePlanningProblem {
            start,
            end,
            v0: v,
            vf: v,
            bounds: KinematicBounds::default(),
            budget,
            grid: box_grid(150.0, 550.0, 150.0, 450.0, 15),
            field: HazardField::new(known, params).unwrap(),
        }
    }

    fn lawnmower(p: &EdgePlanningProblem, cfg: &OptimizerConfig) -> SplinePath {
        lawnmower_spline(
            p.start,
            p.end,
            p.v0,
            p.vf,
            p.budget,
            p.field.params().beta_sense,
            p.bounds.v_nominal(),
            0.0,
            cfg,
        )
        .unwrap()
    }

    fn random_path(rng: &mut ChaCha8Rng, n: usize) -> SplinePath {
        let mut c = Vec::new();
        for i in 0..n {
            c.push(Point2::new(
                150.0 + 400.0 * i as f64 / n as f64 + rng.random_range(-30.0..30.0),
                300.0 + rng.random_range(-80.0..80.0),
            ));
        }
        // keep T / delta_s well away from an integer so the sample count is locally constant
        let tf = rng.random_range(20..60) as f64 * 0.1 + 0.05 + rng.random_range(0.0..20.0f64).floor();
        SplinePath::new(3, c, 0.0, tf).unwrap()
    }

    #[test]
    fn no_new_samples_gives_field_mean() {
        let mut params = HazardParams::default();
        params.p_fa = 0.05;
        let mut p = problem(vec![Point2::new(250.0, 320.0)], params, 400.0);
        p.field
            .push_samples(&[Point2::new(300.0, 300.0), Point2::new(310.0, 290.0)]);
        let g = gamma_with_samples(&p, &[]).unwrap();
        let oracle: f64 = p.grid.iter().map(|&x| p.field.posterior(x).unwrap()).sum::<f64>() / p.grid.len() as f64;
        assert!((g - oracle).abs() < 1e-12);
    }

    #[test]
    fn sampling_every_grid_point_zeroes_gamma() {
        let mut params = HazardParams::default();
        params.p_fa = 0.05;
        params.beta_sense = 50.0;
        let p = problem(vec![Point2::new(250.0, 320.0)], params, 400.0);
        let samples = p.grid.clone();
        let g = gamma_with_samples(&p, &samples).unwrap();
        let f = p.field.with_samples(&samples);
        let oracle: f64 = p.grid.iter().map(|&x| f.posterior(x).unwrap()).sum::<f64>() / p.grid.len() as f64;
        assert!((g - oracle).abs() < 1e-12);
        assert!(g < 1e-12);
    }

    #[test]
    fn duplicated_point_reaverages() {
        let p = problem(vec![Point2::new(250.0, 320.0)], HazardParams::default(), 400.0);
        let samples = [Point2::new(260.0, 300.0), Point2::new(320.0, 310.0)];
        let g = gamma_with_samples(&p, &samples).unwrap();
        let mut dup = p.clone();
        dup.grid.push(p.grid[7]);
        let gd = gamma_with_samples(&dup, &samples).unwrap();
        let phi = p.field.with_samples(&samples).posterior(p.grid[7]).unwrap();
        let n = p.grid.len() as f64;
        assert!((gd - (n * g + phi) / (n + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h = 1e-6;
        for case in 0..20 {
            let known: Vec<Point2> = (0..rng.random_range(0..4))
                .map(|_| Point2::new(rng.random_range(150.0..550.0), rng.random_range(150.0..450.0)))
                .collect();
            let mut params = HazardParams::default();
            params.p_fa = if case % 2 == 0 { 0.0 } else { 0.02 };
            let p = problem(known, params, 400.0);
            let path = random_path(&mut rng, 10);
            let g = gradient_gamma(&path, &p).unwrap();
            let mut fd = Vec::new();
            let mut an = Vec::new();
            for i in 0..path.control().len() {
                for axis in 0..2 {
                    let mut plus = path.clone();
                    let mut minus = path.clone();
                    if axis == 0 {
                        plus.control_mut()[i].x += h;
                        minus.control_mut()[i].x -= h;
                    } else {
                        plus.control_mut()[i].y += h;
                        minus.control_mut()[i].y -= h;
                    }
                    let d = (objective_gamma(&plus, &p).unwrap() - objective_gamma(&minus, &p).unwrap()) / (2.0 * h);
                    fd.push(d);
                    an.push(if axis == 0 { g.control[i].x } else { g.control[i].y });
                }
            }
            let tp = path.with_horizon(0.0, path.tf() + h).unwrap();
            let tm = path.with_horizon(0.0, path.tf() - h).unwrap();
            fd.push((objective_gamma(&tp, &p).unwrap() - objective_gamma(&tm, &p).unwrap()) / (2.0 * h));
            an.push(g.tf);
            let err: f64 = fd.iter().zip(&an).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let norm: f64 = fd.iter().map(|a| a * a).sum::<f64>().sqrt();
            assert!(err <= 1e-4 * norm, "case {case}: {err} vs {norm}");
        }
    }

    #[test]
    fn symmetric_setup_has_no_lateral_gradient() {
        let p = problem(vec![], HazardParams::default(), 400.0);
        let path = SplinePath::line(Point2::new(200.0, 300.0), Point2::new(500.0, 300.0), 3, 10, 0.0, 27.25).unwrap();
        let g = gradient_gamma(&path, &p).unwrap();
        let scale = g.control.iter().map(|c| c.x.abs()).fold(0.0, f64::max);
        for c in &g.control {
            assert!(c.y.abs() <= 1e-9 * scale.max(1e-12), "{c:?}");
        }
    }

    #[test]
    fn flat_posterior_has_zero_gradient() {
        let mut params = HazardParams::default();
        params.p_h = 1.0;
        let p = problem(vec![], params, 400.0);
        let path = random_path(&mut ChaCha8Rng::seed_from_u64(1), 9);
        let g = gradient_gamma(&path, &p).unwrap();
        assert!(g.control.iter().all(|c| c.x == 0.0 && c.y == 0.0));
        assert_eq!(g.tf, 0.0);
    }

    #[test]
    fn budget_equal_to_edge_forces_straight_path() {
        let p = problem(vec![Point2::new(350.0, 360.0)], HazardParams::default(), 300.0);
        let cfg = OptimizerConfig::default();
        let straight = straight_spline(p.start, p.end, 11.0, 0.0, 3).unwrap();
        let init = lawnmower(&p, &cfg);
        let out = plan_edge(&p, &init, &cfg).unwrap();
        assert!(out.residuals.within(&cfg.tolerances), "{:?}", out.residuals);
        // the length band allows 0.5% slack, so the path can only bow by a few meters
        let g_straight = objective_gamma(&straight, &p).unwrap();
        assert!(out.gamma <= g_straight + 1e-9, "{} vs {g_straight}", out.gamma);
        assert!(out.gamma >= 0.95 * g_straight, "{} vs {g_straight}", out.gamma);
        for q in crate::spline::polyline_of(&out.path, 200) {
            assert!((q.y - 300.0).abs() < 0.05 * 300.0);
        }
    }

    #[test]
    fn uniform_prior_does_not_lose_to_lawnmower() {
        let p = problem(vec![], HazardParams::default(), 600.0);
        let cfg = OptimizerConfig::default();
        let init = lawnmower(&p, &cfg);
        let out = plan_edge(&p, &init, &cfg).unwrap();
        assert!(out.gamma <= objective_gamma(&init, &p).unwrap() + 1e-9);
        assert!(out.residuals.within(&cfg.tolerances));
    }

    #[test]
    fn known_hazards_beat_both_baselines() {
        let known = vec![
            Point2::new(200.0, 300.0),
            Point2::new(500.0, 300.0),
            Point2::new(330.0, 420.0),
            Point2::new(420.0, 200.0),
            Point2::new(260.0, 180.0),
        ];
        let p = problem(known, HazardParams::default(), 700.0);
        let cfg = OptimizerConfig::default();
        let init = lawnmower(&p, &cfg);
        let t = std::time::Instant::now();
        let out = plan_edge(&p, &init, &cfg).unwrap();
        let elapsed = t.elapsed();
        let straight = straight_spline(p.start, p.end, 11.0, 0.0, 3).unwrap();
        let g_lawn = objective_gamma(&init, &p).unwrap();
        let g_straight = objective_gamma(&straight, &p).unwrap();
        eprintln!(
            "optimized {} lawnmower {} straight {} ({:?}, {} evals, status {:?}, kept {})",
            out.gamma, g_lawn, g_straight, elapsed, out.evaluations, out.status, out.kept_init
        );
        assert!(out.gamma < g_lawn);
        assert!(out.gamma < g_straight);
        let again = verify_trajectory(&out.path, &p).unwrap();
        assert_eq!(again, out.residuals);
        assert!(out.residuals.within(&cfg.tolerances), "{:?}", out.residuals);

        let twice = plan_edge(&p, &init, &cfg).unwrap();
        assert_eq!(twice.path, out.path);
    }

    #[test]
    fn badly_sized_init_is_rejected() {
        let p = problem(vec![], HazardParams::default(), 600.0);
        let cfg = OptimizerConfig::default();
        let straight = straight_spline(p.start, p.end, 11.0, 0.0, 3).unwrap();
        assert!(matches!(
            plan_edge(&p, &straight, &cfg),
            Err(Error::InfeasibleInit { .. })
        ));
    }
}
