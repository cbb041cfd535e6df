//! Segment Voronoi partition of the domain and per-edge path budgets.
//!
//! Each grid cell is attributed to the route edge nearest its centre; an
//! edge's area is its cell count times the cell area. The spare battery of a
//! vehicle (its marginal budget) is then split over the vehicle's edges in
//! proportion to those areas, on top of each edge's own length.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::nearest_edge;
use crate::routing::{FleetSpec, Route};
use crate::{Domain, Grid, Point2, Segment2};

/// Default resolution of the area grid.
pub const DEFAULT_RESOLUTION: usize = 200;

#[derive(Debug, Clone)]
pub struct SegmentVoronoi {
    edges: Vec<Segment2>,
    grid: Grid,
    assignment: Vec<usize>,
    areas: Vec<f64>,
}

impl SegmentVoronoi {
    pub fn edges(&self) -> &[Segment2] {
        &self.edges
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Nearest-edge index per grid cell.
    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    /// Area attributed to each edge, m^2.
    pub fn areas(&self) -> &[f64] {
        &self.areas
    }

    pub fn cell_of(&self, p: Point2) -> usize {
        nearest_edge(p, &self.edges).map(|(i, _)| i).unwrap_or(0)
    }

    /// Axis-aligned bounds `(x0, x1, y0, y1)` of the grid cells owned by `edge`.
    pub fn bounding_box(&self, edge: usize) -> Option<(f64, f64, f64, f64)> {
        let mut bb: Option<(f64, f64, f64, f64)> = None;
        for (i, &a) in self.assignment.iter().enumerate() {
            if a != edge {
                continue;
            }
            let (ix, iy) = self.grid.coords(i);
            let (x0, x1, y0, y1) = self.grid.cell_bounds(ix, iy);
            bb = Some(match bb {
                None => (x0, x1, y0, y1),
                Some((a0, a1, b0, b1)) => (a0.min(x0), a1.max(x1), b0.min(y0), b1.max(y1)),
            });
        }
        bb
    }
}

pub fn build_segment_voronoi(edges: &[Segment2], domain: &Domain, resolution: usize) -> Result<SegmentVoronoi> {
    if edges.is_empty() {
        return Err(Error::EmptyEdgeSet);
    }
    let grid = Grid::new(*domain, resolution, resolution)?;
    let mut counts = vec![0usize; edges.len()];
    let assignment: Vec<usize> = grid
        .centers()
        .map(|c| {
            let (k, _) = nearest_edge(c, edges).expect("non-empty edge set");
            counts[k] += 1;
            k
        })
        .collect();
    let cell = grid.cell_area();
    let areas = counts.iter().map(|&n| n as f64 * cell).collect();
    Ok(SegmentVoronoi {
        edges: edges.to_vec(),
        grid,
        assignment,
        areas,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetAllocation {
    pub total: f64,
    pub per_edge: Vec<f64>,
}

/// Splits `total` over the edges in proportion to their Voronoi areas.
pub fn allocate_budget(sv: &SegmentVoronoi, total: f64) -> Result<BudgetAllocation> {
    if !(total > 0.0) {
        return Err(Error::param(format!("budget {total} must be positive")));
    }
    if !(sv.areas().iter().sum::<f64>() > 0.0) {
        return Err(Error::param("edge areas are all zero"));
    }
    allocate_by_area(sv.areas(), total)
}

fn allocate_by_area(areas: &[f64], total: f64) -> Result<BudgetAllocation> {
    if !(total >= 0.0) || !total.is_finite() {
        return Err(Error::param(format!("budget {total} must be non-negative")));
    }
    if areas.is_empty() {
        return Err(Error::EmptyEdgeSet);
    }
    let sum: f64 = areas.iter().sum();
    // edges entirely shadowed by another vehicle's edges own no area
    let mut per_edge: Vec<f64> = if sum > 0.0 {
        areas.iter().map(|a| total * a / sum).collect()
    } else {
        vec![total / areas.len() as f64; areas.len()]
    };
    // put the rounding residue on the largest share so the sum is exact
    let residue = total - per_edge.iter().sum::<f64>();
    if let Some((i, _)) = per_edge.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)) {
        per_edge[i] += residue;
    }
    Ok(BudgetAllocation { total, per_edge })
}

/// Spare distance `D_m - length_m` for every vehicle.
pub fn marginal_budget(route: &Route, fleet: &FleetSpec) -> Result<Vec<f64>> {
    route
        .lengths()
        .iter()
        .zip(&fleet.max_distance)
        .enumerate()
        .map(|(m, (len, d))| {
            let margin = d - len;
            if margin < 0.0 {
                Err(Error::NegativeMargin { vehicle: m, margin })
            } else {
                Ok(margin)
            }
        })
        .collect()
}

/// Path budget handed to the planner for each edge of each vehicle.
///
/// Edge `e_k` of vehicle `m` receives `length(e_k) + margin_m * A_k / sum_j A_j`
/// with the area sum taken over vehicle `m`'s own edges, so the budgets of a
/// vehicle add up to `D_m`.
pub fn planner_budgets(route: &Route, fleet: &FleetSpec, sv: &SegmentVoronoi) -> Result<Vec<Vec<f64>>> {
    let margins = marginal_budget(route, fleet)?;
    let mut offset = 0;
    let mut out = Vec::with_capacity(margins.len());
    for (m, margin) in margins.iter().enumerate() {
        let edges = route.vehicle_edges(m);
        let areas = &sv.areas()[offset..offset + edges.len()];
        let split = allocate_by_area(areas, *margin)?;
        out.push(
            edges
                .iter()
                .zip(split.per_edge)
                .map(|(e, share)| e.length() + share)
                .collect(),
        );
        offset += edges.len();
    }
    Ok(out)
}
