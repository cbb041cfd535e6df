//! Route coverage metrics on a uniform grid.
//!
//! `X_i` counts the route edges whose segment meets cell `i` (cells are
//! closed, so touching a corner counts). The edge coverage ratio is the
//! fraction of cells with `X_i > 0`; the edge density variance is the
//! population variance of `X_i`.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::{Domain, Grid, Point2, Segment2};

/// Default metrics grid resolution.
pub const DEFAULT_RESOLUTION: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub ecr: f64,
    pub edv: f64,
    pub nx: usize,
    pub ny: usize,
    /// Per-cell edge counts, row-major from the south-west.
    pub counts: Vec<u32>,
}

impl CoverageReport {
    fn from_counts(grid: &Grid, counts: Vec<u32>) -> Self {
        let n = counts.len() as f64;
        let covered = counts.iter().filter(|&&c| c > 0).count() as f64;
        let mean = counts.iter().map(|&c| c as f64).sum::<f64>() / n;
        let edv = counts.iter().map(|&c| (c as f64 - mean).powi(2)).sum::<f64>() / n;
        Self {
            ecr: covered / n,
            edv,
            nx: grid.nx(),
            ny: grid.ny(),
            counts,
        }
    }
}

/// The 50 x 50 metrics grid over `domain`.
pub fn default_grid(domain: &Domain) -> Result<Grid> {
    Grid::new(*domain, DEFAULT_RESOLUTION, DEFAULT_RESOLUTION)
}

/// Liang-Barsky clip of `a -> b` against a closed rectangle; returns the
/// parameter interval inside, if any.
pub fn clip_segment(a: Point2, b: Point2, x0: f64, x1: f64, y0: f64, y1: f64) -> Option<(f64, f64)> {
    let d = b - a;
    let mut lo = 0.0f64;
    let mut hi = 1.0f64;
    for (p, q) in [(-d.x, a.x - x0), (d.x, x1 - a.x), (-d.y, a.y - y0), (d.y, y1 - a.y)] {
        if p == 0.0 {
            if q < 0.0 {
                return None;
            }
        } else {
            let r = q / p;
            if p < 0.0 {
                lo = lo.max(r);
            } else {
                hi = hi.min(r);
            }
        }
    }
    (lo <= hi).then_some((lo, hi))
}

/// Exact segment-cell incidence, one clip per grid row.
pub fn edge_coverage(edges: &[Segment2], grid: &Grid) -> CoverageReport {
    let mut counts = vec![0u32; grid.len()];
    let d = grid.domain();
    let (dx, dy) = (grid.dx(), grid.dy());
    for e in edges {
        let (a, b) = (e.a(), e.b());
        let Some((t0, t1)) = clip_segment(a, b, d.x_min, d.x_max, d.y_min, d.y_max) else {
            continue;
        };
        let (p, q) = (a.lerp(b, t0), a.lerp(b, t1));
        let iy_lo = span_lo(p.y.min(q.y), d.y_min, dy);
        let iy_hi = span_hi(p.y.max(q.y), d.y_min, dy, grid.ny());
        for iy in iy_lo..=iy_hi {
            let (_, _, ry0, ry1) = grid.cell_bounds(0, iy);
            let Some((s0, s1)) = clip_segment(a, b, d.x_min, d.x_max, ry0, ry1) else {
                continue;
            };
            let xa = a.x + (b.x - a.x) * s0;
            let xb = a.x + (b.x - a.x) * s1;
            let (xlo, xhi) = (xa.min(xb), xa.max(xb));
            let ix_lo = span_lo(xlo, d.x_min, dx);
            let ix_hi = span_hi(xhi, d.x_min, dx, grid.nx());
            for ix in ix_lo..=ix_hi {
                let (cx0, cx1, _, _) = grid.cell_bounds(ix, iy);
                if cx0 <= xhi && cx1 >= xlo {
                    counts[grid.index(ix, iy)] += 1;
                }
            }
        }
    }
    CoverageReport::from_counts(grid, counts)
}

// candidate index ranges are padded by one; the closed-bounds test filters them
fn span_lo(v: f64, origin: f64, step: f64) -> usize {
    let f = ((v - origin) / step).floor() - 1.0;
    if f <= 0.0 {
        0
    } else {
        f as usize
    }
}

fn span_hi(v: f64, origin: f64, step: f64, n: usize) -> usize {
    let f = ((v - origin) / step).floor() + 1.0;
    if f < 0.0 {
        0
    } else {
        (f as usize).min(n - 1)
    }
}

/// Per-cell brute force: one rectangle clip per (edge, cell).
pub fn edge_coverage_brute_force(edges: &[Segment2], grid: &Grid) -> CoverageReport {
    let mut counts = vec![0u32; grid.len()];
    for (i, c) in counts.iter_mut().enumerate() {
        let (ix, iy) = grid.coords(i);
        let (x0, x1, y0, y1) = grid.cell_bounds(ix, iy);
        *c = edges
            .iter()
            .filter(|e| clip_segment(e.a(), e.b(), x0, x1, y0, y1).is_some())
            .count() as u32;
    }
    CoverageReport::from_counts(grid, counts)
}

/// Cheaper rasterisation: marks the cell containing each point sampled
/// along the segment at half-cell spacing. Misses cells the segment only clips.
pub fn edge_coverage_sampled(edges: &[Segment2], grid: &Grid) -> CoverageReport {
    let mut counts = vec![0u32; grid.len()];
    let d = grid.domain();
    let step = 0.5 * grid.dx().min(grid.dy());
    let mut hit = Vec::new();
    for e in edges {
        hit.clear();
        let n = (e.length() / step).ceil().max(1.0) as usize;
        for j in 0..=n {
            let p = e.a().lerp(e.b(), j as f64 / n as f64);
            if !d.contains(p) {
                continue;
            }
            let ix = (((p.x - d.x_min) / grid.dx()) as usize).min(grid.nx() - 1);
            let iy = (((p.y - d.y_min) / grid.dy()) as usize).min(grid.ny() - 1);
            hit.push(grid.index(ix, iy));
        }
        hit.sort_unstable();
        hit.dedup();
        for &i in &hit {
            counts[i] += 1;
        }
    }
    CoverageReport::from_counts(grid, counts)
}
