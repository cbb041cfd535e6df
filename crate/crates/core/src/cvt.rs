//! Pseudo-node placement by centroidal Voronoi tessellation.
//!
//! Known hazards act as fixed generators; pseudo-nodes are adaptive
//! generators moved to the density-weighted centroid of their Monte-Carlo
//! Voronoi cell each iteration. The density `alpha + beta_density * d(x, E)`
//! grows with distance from the current route edges `E`, which pushes
//! pseudo-nodes into regions the route does not reach. With
//! `beta_density = 0` this is ordinary (node-based) CVT.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::min_distance_to_edge_set;
use crate::{Domain, Point2, Segment2};

/// Minimum clearance between an initial pseudo-node and any known node, meters.
pub const MIN_CLEARANCE: f64 = 1.0;
const MAX_PLACEMENT_ATTEMPTS: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvtConfig {
    pub n_pseudo: usize,
    pub alpha: f64,
    pub beta_density: f64,
    pub n_samples: usize,
    pub max_iter: usize,
    /// Stop once every adaptive generator moves less than this, meters.
    pub move_tol: f64,
    pub seed: u64,
}

impl Default for CvtConfig {
    fn default() -> Self {
        Self {
            n_pseudo: 3,
            alpha: 0.1,
            beta_density: 0.9,
            n_samples: 20_000,
            max_iter: 50,
            move_tol: 1.0,
            seed: 0,
        }
    }
}

impl CvtConfig {
    /// Node-based variant: uniform density.
    pub fn node_based(self) -> Self {
        Self {
            beta_density: 0.0,
            ..self
        }
    }

    pub fn validate(&self, n_fixed: usize) -> Result<()> {
        if !(self.alpha > 0.0) || !(self.beta_density >= 0.0) {
            return Err(Error::param("CVT needs alpha > 0 and beta_density >= 0"));
        }
        if self.n_pseudo == 0 {
            return Err(Error::param("CVT needs at least one pseudo-node"));
        }
        if self.n_samples < 10 * (self.n_pseudo + n_fixed) {
            return Err(Error::param(format!(
                "{} CVT samples are too few for {} generators",
                self.n_samples,
                self.n_pseudo + n_fixed
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSet {
    /// Known hazards; never moved.
    pub fixed: Vec<Point2>,
    /// Pseudo-nodes.
    pub adaptive: Vec<Point2>,
}

impl GeneratorSet {
    pub fn len(&self) -> usize {
        self.fixed.len() + self.adaptive.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn get(&self, i: usize) -> Point2 {
        if i < self.fixed.len() {
            self.fixed[i]
        } else {
            self.adaptive[i - self.fixed.len()]
        }
    }

    /// Index of the nearest generator (fixed first, then adaptive; ties to the lowest index).
    pub fn nearest(&self, p: Point2) -> usize {
        let mut best = (0, f64::INFINITY);
        for i in 0..self.len() {
            let d = self.get(i).dist_sq(p);
            if d < best.1 {
                best = (i, d);
            }
        }
        best.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvtOutcome {
    pub generators: GeneratorSet,
    pub iterations: usize,
    pub converged: bool,
    /// Number of times an adaptive generator with an empty cell was re-drawn.
    pub reinitialized: usize,
}

/// `alpha + beta_density * d(p, edges)`.
pub fn density(p: Point2, edges: &[Segment2], alpha: f64, beta_density: f64) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::param("density offset alpha must be positive"));
    }
    if beta_density == 0.0 {
        return Ok(alpha);
    }
    Ok(alpha + beta_density * min_distance_to_edge_set(p, edges)?)
}

/// Uniform random pseudo-nodes at least [`MIN_CLEARANCE`] from every known node.
pub fn place_initial_pseudo_nodes(
    known: &[Point2],
    domain: &Domain,
    n_pseudo: usize,
    seed: u64,
) -> Result<Vec<Point2>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_pseudo)
        .map(|_| draw_clear_point(known, domain, &mut rng))
        .collect()
}

fn draw_clear_point<R: Rng>(known: &[Point2], domain: &Domain, rng: &mut R) -> Result<Point2> {
    for _ in 0..MAX_PLACEMENT_ATTEMPTS {
        let p = domain.from_unit(rng.random::<f64>(), rng.random::<f64>());
        if known.iter().all(|k| k.dist(p) >= MIN_CLEARANCE) {
            return Ok(p);
        }
    }
    Err(Error::param(
        "domain has no room for a pseudo-node clear of the known nodes",
    ))
}

/// Density-weighted samples `(point, rho)` drawn uniformly over the domain.
pub fn weighted_samples<R: Rng>(
    domain: &Domain,
    edges: &[Segment2],
    cfg: &CvtConfig,
    rng: &mut R,
) -> Result<Vec<(Point2, f64)>> {
    (0..cfg.n_samples)
        .map(|_| {
            let p = domain.from_unit(rng.random::<f64>(), rng.random::<f64>());
            density(p, edges, cfg.alpha, cfg.beta_density).map(|w| (p, w))
        })
        .collect()
}

/// Monte-Carlo CVT energy `sum rho(s) |s - nearest generator|^2`.
pub fn cvt_energy(gens: &GeneratorSet, samples: &[(Point2, f64)]) -> f64 {
    samples
        .iter()
        .map(|(s, w)| w * gens.get(gens.nearest(*s)).dist_sq(*s))
        .sum()
}

/// One centroid update over a fixed sample set.
///
/// Returns the new generators and the indices of adaptive generators whose
/// cell received no samples (left in place).
pub fn lloyd_step(gens: &GeneratorSet, samples: &[(Point2, f64)]) -> (GeneratorSet, Vec<usize>) {
    let nf = gens.fixed.len();
    let na = gens.adaptive.len();
    let mut sum = vec![Point2::zero(); na];
    let mut mass = vec![0.0; na];
    for (s, w) in samples {
        let g = gens.nearest(*s);
        if g >= nf {
            sum[g - nf] = sum[g - nf] + *s * *w;
            mass[g - nf] += w;
        }
    }
    let mut next = gens.clone();
    let mut empty = Vec::new();
    for i in 0..na {
        if mass[i] > 0.0 {
            next.adaptive[i] = sum[i] / mass[i];
        } else {
            empty.push(i);
        }
    }
    (next, empty)
}

/// Iterates sample-and-recentre until every pseudo-node settles or `max_iter` is hit.
pub fn run_cvt(generators: GeneratorSet, edges: &[Segment2], domain: &Domain, cfg: &CvtConfig) -> Result<CvtOutcome> {
    if generators.is_empty() {
        return Err(Error::param("CVT needs at least one generator"));
    }
    if !(cfg.alpha > 0.0) || !(cfg.beta_density >= 0.0) {
        return Err(Error::param("CVT needs alpha > 0 and beta_density >= 0"));
    }
    if cfg.n_samples < 10 * generators.len() {
        return Err(Error::param("too few CVT samples for the generator count"));
    }
    if cfg.beta_density > 0.0 && edges.is_empty() {
        return Err(Error::EmptyEdgeSet);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut gens = generators;
    let mut reinitialized = 0;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iter {
        iterations += 1;
        let samples = weighted_samples(domain, edges, cfg, &mut rng)?;
        let (mut next, empty) = lloyd_step(&gens, &samples);
        for i in empty {
            next.adaptive[i] = draw_clear_point(&next.fixed, domain, &mut rng)?;
            reinitialized += 1;
        }
        let max_move = gens
            .adaptive
            .iter()
            .zip(&next.adaptive)
            .map(|(a, b)| a.dist(*b))
            .fold(0.0, f64::max);
        gens = next;
        if max_move < cfg.move_tol {
            converged = true;
            break;
        }
    }
    for p in gens.adaptive.iter_mut() {
        *p = domain.clamp(*p);
    }
    Ok(CvtOutcome {
        generators: gens,
        iterations,
        converged,
        reinitialized,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn domain() -> Domain {
        Domain::square(1000.0).unwrap()
    }

    #[test]
    fn density_values() {
        let e = [Segment2::new(Point2::new(0.0, 0.0), Point2::new(100.0, 0.0)).unwrap()];
        assert_eq!(density(Point2::new(3.0, 4.0), &[], 0.1, 0.0).unwrap(), 0.1);
        assert_eq!(density(Point2::new(50.0, 0.0), &e, 0.1, 0.9).unwrap(), 0.1);
        assert!((density(Point2::new(50.0, 10.0), &e, 0.1, 0.9).unwrap() - 9.1).abs() < 1e-12);
        assert_eq!(density(Point2::new(1.0, 1.0), &[], 0.1, 0.9), Err(Error::EmptyEdgeSet));
    }

    #[test]
    fn initial_placement() {
        let known = vec![Point2::new(100.0, 100.0)];
        let a = place_initial_pseudo_nodes(&known, &domain(), 3, 5).unwrap();
        let b = place_initial_pseudo_nodes(&known, &domain(), 3, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 3);
        assert!(a.iter().all(|p| domain().contains(*p)));
        assert!(a[0] != a[1] && a[1] != a[2]);
    }

    #[test]
    fn placement_in_cramped_domain_keeps_clearance() {
        // a 2 m square whose centre is a known node: most draws collide
        let d = Domain::square(2.0).unwrap();
        let known = [Point2::new(1.0, 1.0)];
        for seed in 0..20 {
            let p = place_initial_pseudo_nodes(&known, &d, 4, seed).unwrap();
            for q in p {
                assert!(q.dist(known[0]) >= MIN_CLEARANCE);
                assert!(d.contains(q));
            }
        }
    }

    #[test]
    fn single_generator_converges_to_centre() {
        let gens = GeneratorSet {
            fixed: vec![],
            adaptive: vec![Point2::new(100.0, 900.0)],
        };
        let cfg = CvtConfig {
            beta_density: 0.0,
            n_pseudo: 1,
            ..Default::default()
        };
        let out = run_cvt(gens, &[], &domain(), &cfg).unwrap();
        let c = out.generators.adaptive[0];
        assert!(c.dist(Point2::new(500.0, 500.0)) < 0.02 * 1000.0);
        assert!(out.iterations <= cfg.max_iter);
    }

    #[test]
    fn fixed_generators_never_move() {
        let fixed = vec![Point2::new(123.456, 789.012), Point2::new(700.0, 200.0)];
        let gens = GeneratorSet {
            fixed: fixed.clone(),
            adaptive: vec![Point2::new(500.0, 500.0), Point2::new(900.0, 900.0)],
        };
        let edges = [Segment2::new(fixed[0], fixed[1]).unwrap()];
        let out = run_cvt(gens, &edges, &domain(), &CvtConfig::default()).unwrap();
        assert_eq!(out.generators.fixed, fixed);
        assert!(out.generators.adaptive.iter().all(|p| domain().contains(*p)));
    }

    #[test]
    fn uniform_density_ignores_edges() {
        let gens = GeneratorSet {
            fixed: vec![Point2::new(200.0, 200.0)],
            adaptive: vec![Point2::new(600.0, 500.0), Point2::new(300.0, 800.0)],
        };
        let edges = [Segment2::new(Point2::new(0.0, 0.0), Point2::new(1000.0, 300.0)).unwrap()];
        let cfg = CvtConfig {
            beta_density: 0.0,
            ..Default::default()
        };
        let a = run_cvt(gens.clone(), &edges, &domain(), &cfg).unwrap();
        let b = run_cvt(gens, &[], &domain(), &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn edge_density_pushes_generator_off_the_route() {
        let edge = [Segment2::new(Point2::new(0.0, 500.0), Point2::new(500.0, 500.0)).unwrap()];
        let start = GeneratorSet {
            fixed: vec![],
            adaptive: vec![Point2::new(400.0, 400.0)],
        };
        let cfg = CvtConfig {
            n_pseudo: 1,
            alpha: 0.1,
            beta_density: 50.0,
            seed: 9,
            ..Default::default()
        };
        let out = run_cvt(start.clone(), &edge, &domain(), &cfg).unwrap();
        let p = out.generators.adaptive[0];

        // one generator owns the whole domain, so the fixed point is the
        // weighted centroid of the domain; estimate it with 10x the samples
        let mut rng = ChaCha8Rng::seed_from_u64(12345);
        let big = CvtConfig {
            n_samples: 10 * cfg.n_samples,
            ..cfg.clone()
        };
        let s = weighted_samples(&domain(), &edge, &big, &mut rng).unwrap();
        let mass: f64 = s.iter().map(|(_, w)| w).sum();
        let oracle = s.iter().fold(Point2::zero(), |a, (q, w)| a + *q * *w) / mass;
        assert!(p.dist(oracle) < 10.0, "{p:?} vs {oracle:?}");

        let uniform = run_cvt(start, &edge, &domain(), &cfg.clone().node_based()).unwrap();
        let d_edge = min_distance_to_edge_set(p, &edge).unwrap();
        let d_uniform = min_distance_to_edge_set(uniform.generators.adaptive[0], &edge).unwrap();
        assert!(d_edge > d_uniform + 10.0, "{d_edge} vs {d_uniform}");
    }

    #[test]
    fn lloyd_step_does_not_raise_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let edges = [
            Segment2::new(Point2::new(100.0, 100.0), Point2::new(800.0, 300.0)).unwrap(),
            Segment2::new(Point2::new(800.0, 300.0), Point2::new(400.0, 900.0)).unwrap(),
        ];
        let cfg = CvtConfig::default();
        let mut gens = GeneratorSet {
            fixed: vec![Point2::new(100.0, 100.0), Point2::new(800.0, 300.0)],
            adaptive: place_initial_pseudo_nodes(&[], &domain(), 4, 1).unwrap(),
        };
        for _ in 0..10 {
            let s = weighted_samples(&domain(), &edges, &cfg, &mut rng).unwrap();
            let before = cvt_energy(&gens, &s);
            let (next, _) = lloyd_step(&gens, &s);
            let after = cvt_energy(&next, &s);
            assert!(after <= before * (1.0 + 1e-12), "{after} > {before}");
            gens = next;
        }
    }

    #[test]
    fn config_validation() {
        let cfg = CvtConfig {
            n_samples: 30,
            ..Default::default()
        };
        assert!(cfg.validate(5).is_err());
        assert!(CvtConfig::default().validate(15).is_ok());
        let bad = CvtConfig {
            alpha: 0.0,
            ..Default::default()
        };
        assert!(bad.validate(1).is_err());
    }
}
