//! Distance-constrained multi-vehicle routing over a depot and a set of nodes.
//!
//! Every vehicle leaves the depot, visits a disjoint subset of the nodes and
//! returns, with its tour length bounded by its own travel budget. The visit
//! order inside a tour plays the role of the usual MTZ ordering variables, so
//! tours are subtour-free by construction.
//!
//! [`solve_vrp`] is a multi-start local search (nearest-neighbour or random
//! insertion construction, then 2-opt, Or-opt and inter-route relocation);
//! [`solve_vrp_exact`] is a Held-Karp style exhaustive solver for small
//! instances.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::{Point2, Segment2};

const IMPROVE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Known,
    Pseudo,
}

/// Depot (index 0) plus the nodes to visit (indices `1..=len()`).
#[derive(Debug, Clone, PartialEq)]
pub struct NodeSet {
    depot: Point2,
    nodes: Vec<Point2>,
    kinds: Vec<NodeKind>,
}

impl NodeSet {
    pub fn new(depot: Point2, nodes: Vec<Point2>, kinds: Vec<NodeKind>) -> Result<Self> {
        if nodes.len() != kinds.len() {
            return Err(Error::param("node and kind lists differ in length"));
        }
        if !depot.is_finite() || nodes.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidGeometry("non-finite node position".into()));
        }
        for (i, p) in nodes.iter().enumerate() {
            if *p == depot {
                return Err(Error::InvalidGeometry(format!(
                    "node {} coincides with the depot",
                    i + 1
                )));
            }
            if nodes[..i].contains(p) {
                return Err(Error::InvalidGeometry(format!("node {} is duplicated", i + 1)));
            }
        }
        Ok(Self { depot, nodes, kinds })
    }

    /// All nodes marked [`NodeKind::Known`].
    pub fn known(depot: Point2, nodes: Vec<Point2>) -> Result<Self> {
        let kinds = vec![NodeKind::Known; nodes.len()];
        Self::new(depot, nodes, kinds)
    }

    /// Known nodes followed by pseudo-nodes.
    pub fn augmented(depot: Point2, known: &[Point2], pseudo: &[Point2]) -> Result<Self> {
        let mut nodes = known.to_vec();
        nodes.extend_from_slice(pseudo);
        let mut kinds = vec![NodeKind::Known; known.len()];
        kinds.extend(std::iter::repeat_n(NodeKind::Pseudo, pseudo.len()));
        Self::new(depot, nodes, kinds)
    }

    pub fn depot(&self) -> Point2 {
        self.depot
    }

    /// Number of non-depot nodes.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Position of node `i`, where `0` is the depot.
    pub fn position(&self, i: usize) -> Point2 {
        if i == 0 {
            self.depot
        } else {
            self.nodes[i - 1]
        }
    }

    pub fn kind(&self, i: usize) -> Option<NodeKind> {
        if i == 0 {
            None
        } else {
            Some(self.kinds[i - 1])
        }
    }

    pub fn nodes(&self) -> &[Point2] {
        &self.nodes
    }

    /// Positions indexed like the route sequences (depot first).
    pub fn positions(&self) -> Vec<Point2> {
        std::iter::once(self.depot).chain(self.nodes.iter().copied()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetSpec {
    /// Travel budget `D_m` per vehicle, meters.
    pub max_distance: Vec<f64>,
}

impl FleetSpec {
    pub fn uniform(vehicles: usize, max_distance: f64) -> Result<Self> {
        let f = Self {
            max_distance: vec![max_distance; vehicles],
        };
        f.validate()?;
        Ok(f)
    }

    pub fn vehicles(&self) -> usize {
        self.max_distance.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_distance.is_empty() {
            return Err(Error::param("fleet needs at least one vehicle"));
        }
        if let Some(d) = self.max_distance.iter().find(|d| !(**d > 0.0) || !d.is_finite()) {
            return Err(Error::param(format!("vehicle budget {d} must be positive")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub restarts: usize,
    pub seed: u64,
    /// Weight on budget overrun during the search; final routes must have none.
    pub overload_penalty: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            restarts: 20,
            seed: 0,
            overload_penalty: 1e3,
        }
    }
}

/// Per-vehicle closed tours `0, n_1, ..., n_j, 0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Route {
    tours: Vec<Vec<usize>>,
    lengths: Vec<f64>,
    positions: Vec<Point2>,
}

impl Route {
    /// Builds a route from explicit tours, recomputing lengths.
    pub fn from_tours(nodes: &NodeSet, tours: Vec<Vec<usize>>) -> Result<Self> {
        let positions = nodes.positions();
        let n = nodes.len();
        let mut seen = vec![false; n + 1];
        for t in &tours {
            if t.len() < 3 || t[0] != 0 || *t.last().unwrap() != 0 {
                return Err(Error::param(format!("tour {t:?} must start and end at the depot")));
            }
            for &i in &t[1..t.len() - 1] {
                if i == 0 || i > n || seen[i] {
                    return Err(Error::param(format!("tour {t:?} repeats or misplaces node {i}")));
                }
                seen[i] = true;
            }
        }
        let missing: Vec<usize> = (1..=n).filter(|i| !seen[*i]).collect();
        if !missing.is_empty() {
            return Err(Error::param(format!("nodes {missing:?} not visited")));
        }
        let lengths = tours.iter().map(|t| tour_length_pts(&positions, t)).collect();
        Ok(Self {
            tours,
            lengths,
            positions,
        })
    }

    pub fn tours(&self) -> &[Vec<usize>] {
        &self.tours
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths
    }

    pub fn total_length(&self) -> f64 {
        self.lengths.iter().sum()
    }

    pub fn position(&self, i: usize) -> Point2 {
        self.positions[i]
    }

    /// Position of node `i` within vehicle `m`'s tour (the MTZ `u_im`), if visited.
    pub fn visit_order(&self, vehicle: usize, node: usize) -> Option<usize> {
        self.tours
            .get(vehicle)?
            .iter()
            .skip(1)
            .position(|&j| j == node && node != 0)
            .map(|p| p + 1)
    }

    /// Segments of vehicle `m`'s tour, depot legs included.
    pub fn vehicle_edges(&self, vehicle: usize) -> Vec<Segment2> {
        self.tours[vehicle]
            .windows(2)
            .map(|w| {
                Segment2::new(self.positions[w[0]], self.positions[w[1]])
                    .expect("distinct nodes give non-degenerate edges")
            })
            .collect()
    }

    /// Checks the structural invariants against a node set and fleet.
    pub fn verify(&self, nodes: &NodeSet, fleet: &FleetSpec) -> Result<()> {
        let rebuilt = Route::from_tours(nodes, self.tours.clone())?;
        if self.tours.len() != fleet.vehicles() {
            return Err(Error::param("tour count differs from fleet size"));
        }
        for (m, (&len, &d)) in rebuilt.lengths.iter().zip(&fleet.max_distance).enumerate() {
            if len > d {
                return Err(Error::InfeasibleInstance {
                    nodes: self.tours[m][1..self.tours[m].len() - 1].to_vec(),
                    reason: format!("vehicle {m} length {len} exceeds budget {d}"),
                });
            }
        }
        Ok(())
    }
}

/// Consecutive-pair segments for every vehicle, concatenated in vehicle order.
pub fn route_edges(route: &Route) -> Vec<Segment2> {
    (0..route.tours.len()).flat_map(|m| route.vehicle_edges(m)).collect()
}

struct DistMatrix {
    n: usize,
    d: Vec<f64>,
}

impl DistMatrix {
    fn new(pts: &[Point2]) -> Self {
        let n = pts.len();
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let v = pts[i].dist(pts[j]);
                d[i * n + j] = v;
                d[j * n + i] = v;
            }
        }
        Self { n, d }
    }

    #[inline]
    fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.n + j]
    }

    /// Length of an open node sequence closed through the depot on both ends.
    fn tour(&self, seq: &[usize]) -> f64 {
        let mut prev = 0;
        let mut len = 0.0;
        for &i in seq {
            len += self.get(prev, i);
            prev = i;
        }
        len + self.get(prev, 0)
    }
}

fn tour_length_pts(pts: &[Point2], tour: &[usize]) -> f64 {
    tour.windows(2).map(|w| pts[w[0]].dist(pts[w[1]])).sum()
}

fn precheck(nodes: &NodeSet, fleet: &FleetSpec) -> Result<DistMatrix> {
    fleet.validate()?;
    if nodes.is_empty() {
        return Err(Error::InfeasibleInstance {
            nodes: vec![],
            reason: "every vehicle must leave the depot but there are no nodes".into(),
        });
    }
    if fleet.vehicles() > nodes.len() {
        return Err(Error::InfeasibleInstance {
            nodes: vec![],
            reason: format!(
                "{} vehicles cannot each visit a node among {}",
                fleet.vehicles(),
                nodes.len()
            ),
        });
    }
    let dm = DistMatrix::new(&nodes.positions());
    let dmax = fleet.max_distance.iter().cloned().fold(f64::MIN, f64::max);
    let unreachable: Vec<usize> = (1..=nodes.len()).filter(|&i| 2.0 * dm.get(0, i) > dmax).collect();
    if !unreachable.is_empty() {
        return Err(Error::InfeasibleInstance {
            nodes: unreachable,
            reason: format!("depot round trip exceeds every vehicle budget (max {dmax} m)"),
        });
    }
    Ok(dm)
}

/// Heuristic distance-constrained VRP solver; deterministic given `config.seed`.
pub fn solve_vrp(nodes: &NodeSet, fleet: &FleetSpec, config: &SolverConfig) -> Result<Route> {
    let dm = precheck(nodes, fleet)?;
    let search = Search {
        dm: &dm,
        budgets: &fleet.max_distance,
        penalty: config.overload_penalty,
    };
    let n = nodes.len();
    let mut best: Option<(f64, Vec<Vec<usize>>)> = None;
    for r in 0..config.restarts.max(1) {
        let mut sol = if r == 0 {
            search.nearest_neighbour(n)
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ (r as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let mut order: Vec<usize> = (1..=n).collect();
            order.shuffle(&mut rng);
            search.random_insertion(&order)
        };
        search.local_search(&mut sol);
        let cost = search.cost(&sol);
        if best.as_ref().is_none_or(|(c, _)| cost < *c - IMPROVE_EPS) {
            best = Some((cost, sol));
        }
    }
    let (_, sol) = best.expect("at least one restart");
    let overloaded: Vec<usize> = sol
        .iter()
        .zip(fleet.max_distance.iter())
        .filter(|(s, d)| dm.tour(s) > **d)
        .flat_map(|(s, _)| s.iter().copied())
        .collect();
    if !overloaded.is_empty() {
        return Err(Error::InfeasibleInstance {
            nodes: overloaded,
            reason: "no tour assignment within the vehicle budgets was found".into(),
        });
    }
    let tours = sol
        .into_iter()
        .map(|s| {
            let mut t = Vec::with_capacity(s.len() + 2);
            t.push(0);
            t.extend(s);
            t.push(0);
            t
        })
        .collect();
    Route::from_tours(nodes, tours)
}

struct Search<'a> {
    dm: &'a DistMatrix,
    budgets: &'a [f64],
    penalty: f64,
}

impl Search<'_> {
    fn route_cost(&self, m: usize, seq: &[usize]) -> f64 {
        let len = self.dm.tour(seq);
        len + self.penalty * (len - self.budgets[m]).max(0.0)
    }

    fn cost(&self, sol: &[Vec<usize>]) -> f64 {
        sol.iter().enumerate().map(|(m, s)| self.route_cost(m, s)).sum()
    }

    fn nearest_neighbour(&self, n: usize) -> Vec<Vec<usize>> {
        let vehicles = self.budgets.len();
        let mut sol: Vec<Vec<usize>> = vec![Vec::new(); vehicles];
        let mut used = vec![false; n + 1];
        for step in 0..n {
            let mut pick: Option<(f64, usize, usize)> = None;
            for (m, seq) in sol.iter().enumerate() {
                // vehicles must each take a node before any takes a second one
                if step < vehicles && !seq.is_empty() {
                    continue;
                }
                let tail = seq.last().copied().unwrap_or(0);
                for i in 1..=n {
                    if used[i] {
                        continue;
                    }
                    let d = self.dm.get(tail, i);
                    if pick.is_none_or(|(bd, _, _)| d < bd) {
                        pick = Some((d, m, i));
                    }
                }
            }
            let (_, m, i) = pick.expect("unvisited node remains");
            used[i] = true;
            sol[m].push(i);
        }
        sol
    }

    fn random_insertion(&self, order: &[usize]) -> Vec<Vec<usize>> {
        let vehicles = self.budgets.len();
        let mut sol: Vec<Vec<usize>> = vec![Vec::new(); vehicles];
        for (k, &i) in order.iter().enumerate() {
            let mut pick: Option<(f64, usize, usize)> = None;
            for (m, seq) in sol.iter().enumerate() {
                if k < vehicles && !seq.is_empty() {
                    continue;
                }
                for pos in 0..=seq.len() {
                    let prev = if pos == 0 { 0 } else { seq[pos - 1] };
                    let next = if pos == seq.len() { 0 } else { seq[pos] };
                    let delta = self.dm.get(prev, i) + self.dm.get(i, next) - self.dm.get(prev, next);
                    if pick.is_none_or(|(bd, _, _)| delta < bd) {
                        pick = Some((delta, m, pos));
                    }
                }
            }
            let (_, m, pos) = pick.expect("some vehicle accepts the node");
            sol[m].insert(pos, i);
        }
        sol
    }

    fn local_search(&self, sol: &mut [Vec<usize>]) {
        loop {
            let mut improved = false;
            for m in 0..sol.len() {
                improved |= self.two_opt(m, &mut sol[m]);
            }
            improved |= self.or_opt(sol);
            if !improved {
                break;
            }
        }
    }

    fn two_opt(&self, m: usize, seq: &mut [usize]) -> bool {
        let mut any = false;
        loop {
            let base = self.route_cost(m, seq);
            let mut best: Option<(f64, usize, usize)> = None;
            for i in 0..seq.len() {
                for j in (i + 1)..seq.len() {
                    seq[i..=j].reverse();
                    let c = self.route_cost(m, seq);
                    seq[i..=j].reverse();
                    if c < base - IMPROVE_EPS && best.is_none_or(|(bc, _, _)| c < bc - IMPROVE_EPS) {
                        best = Some((c, i, j));
                    }
                }
            }
            match best {
                Some((_, i, j)) => {
                    seq[i..=j].reverse();
                    any = true;
                }
                None => return any,
            }
        }
    }

    /// Moves chains of 1..=3 consecutive nodes, possibly reversed, within or across tours.
    fn or_opt(&self, sol: &mut [Vec<usize>]) -> bool {
        let mut any = false;
        loop {
            let base = self.cost(sol);
            let mut best: Option<(f64, Move)> = None;
            for from in 0..sol.len() {
                for chain in 1..=3usize {
                    if chain > sol[from].len() {
                        continue;
                    }
                    for start in 0..=(sol[from].len() - chain) {
                        // a vehicle may not be emptied
                        if sol[from].len() == chain {
                            continue;
                        }
                        for to in 0..sol.len() {
                            let mv_base = Move {
                                from,
                                start,
                                chain,
                                to,
                                pos: 0,
                                reversed: false,
                            };
                            let target_len = if to == from {
                                sol[from].len() - chain
                            } else {
                                sol[to].len()
                            };
                            for pos in 0..=target_len {
                                for reversed in [false, true] {
                                    if reversed && chain == 1 {
                                        continue;
                                    }
                                    let mv = Move {
                                        pos,
                                        reversed,
                                        ..mv_base
                                    };
                                    if to == from && pos == start && !reversed {
                                        continue;
                                    }
                                    let c = self.cost_after(sol, &mv, base);
                                    if c < base - IMPROVE_EPS
                                        && best.as_ref().is_none_or(|(bc, _)| c < bc - IMPROVE_EPS)
                                    {
                                        best = Some((c, mv));
                                    }
                                }
                            }
                        }
                    }
                }
            }
            match best {
                Some((_, mv)) => {
                    apply_move(sol, &mv);
                    any = true;
                }
                None => return any,
            }
        }
    }

    fn cost_after(&self, sol: &[Vec<usize>], mv: &Move, base: f64) -> f64 {
        let mut src = sol[mv.from].clone();
        let mut seg: Vec<usize> = src.drain(mv.start..mv.start + mv.chain).collect();
        if mv.reversed {
            seg.reverse();
        }
        if mv.to == mv.from {
            src.splice(mv.pos..mv.pos, seg);
            base - self.route_cost(mv.from, &sol[mv.from]) + self.route_cost(mv.from, &src)
        } else {
            let mut dst = sol[mv.to].clone();
            dst.splice(mv.pos..mv.pos, seg);
            base - self.route_cost(mv.from, &sol[mv.from]) - self.route_cost(mv.to, &sol[mv.to])
                + self.route_cost(mv.from, &src)
                + self.route_cost(mv.to, &dst)
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Move {
    from: usize,
    start: usize,
    chain: usize,
    to: usize,
    pos: usize,
    reversed: bool,
}

fn apply_move(sol: &mut [Vec<usize>], mv: &Move) {
    let mut seg: Vec<usize> = sol[mv.from].drain(mv.start..mv.start + mv.chain).collect();
    if mv.reversed {
        seg.reverse();
    }
    sol[mv.to].splice(mv.pos..mv.pos, seg);
}

/// Maximum node count accepted by [`solve_vrp_exact`].
pub const EXACT_MAX_NODES: usize = 10;
/// Maximum vehicle count accepted by [`solve_vrp_exact`].
pub const EXACT_MAX_VEHICLES: usize = 2;

/// Global optimum by dynamic programming over node subsets (Held-Karp) and
/// enumeration of the vehicle partitions.
pub fn solve_vrp_exact(nodes: &NodeSet, fleet: &FleetSpec) -> Result<Route> {
    let n = nodes.len();
    if n > EXACT_MAX_NODES || fleet.vehicles() > EXACT_MAX_VEHICLES {
        return Err(Error::InstanceTooLarge {
            nodes: n,
            vehicles: fleet.vehicles(),
        });
    }
    let dm = precheck(nodes, fleet)?;
    let full = (1usize << n) - 1;
    // dp[mask][j]: shortest depot -> (mask) path ending at node j+1
    let mut dp = vec![f64::INFINITY; (full + 1) * n];
    let mut parent = vec![usize::MAX; (full + 1) * n];
    for j in 0..n {
        dp[(1 << j) * n + j] = dm.get(0, j + 1);
    }
    for mask in 1..=full {
        for j in 0..n {
            let cur = dp[mask * n + j];
            if mask & (1 << j) == 0 || !cur.is_finite() {
                continue;
            }
            for k in 0..n {
                if mask & (1 << k) != 0 {
                    continue;
                }
                let next = mask | (1 << k);
                let c = cur + dm.get(j + 1, k + 1);
                if c < dp[next * n + k] {
                    dp[next * n + k] = c;
                    parent[next * n + k] = j;
                }
            }
        }
    }
    let closed = |mask: usize| -> (f64, usize) {
        let mut best = (f64::INFINITY, usize::MAX);
        for j in 0..n {
            if mask & (1 << j) != 0 {
                let c = dp[mask * n + j] + dm.get(j + 1, 0);
                if c < best.0 {
                    best = (c, j);
                }
            }
        }
        best
    };
    let rebuild = |mask: usize, last: usize| -> Vec<usize> {
        let mut seq = Vec::new();
        let (mut m, mut j) = (mask, last);
        while j != usize::MAX {
            seq.push(j + 1);
            let p = parent[m * n + j];
            m &= !(1 << j);
            j = p;
        }
        seq.reverse();
        let mut t = vec![0];
        t.extend(seq);
        t.push(0);
        t
    };

    let budgets = &fleet.max_distance;
    let tours = if fleet.vehicles() == 1 {
        let (c, last) = closed(full);
        if c > budgets[0] {
            return Err(Error::InfeasibleInstance {
                nodes: (1..=n).collect(),
                reason: format!("optimal tour {c} m exceeds budget {} m", budgets[0]),
            });
        }
        vec![rebuild(full, last)]
    } else {
        let mut best: Option<(f64, usize, usize, usize)> = None;
        for mask in 1..full {
            let rest = full & !mask;
            let (c0, l0) = closed(mask);
            let (c1, l1) = closed(rest);
            if c0 > budgets[0] || c1 > budgets[1] {
                continue;
            }
            if best.is_none_or(|(bc, ..)| c0 + c1 < bc) {
                best = Some((c0 + c1, mask, l0, l1));
            }
        }
        let (_, mask, l0, l1) = best.ok_or_else(|| Error::InfeasibleInstance {
            nodes: (1..=n).collect(),
            reason: "no partition fits the vehicle budgets".into(),
        })?;
        vec![rebuild(mask, l0), rebuild(full & !mask, l1)]
    };
    Route::from_tours(nodes, tours)
}
