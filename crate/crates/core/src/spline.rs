//! Uniform B-spline trajectories over a time horizon `[t0, tf]`.
//!
//! The knot vector is uniform with spacing `dt = (tf - t0) / n_spans` and
//! extends `degree` knots beyond each end of the horizon, so every time in
//! the horizon has exactly `degree + 1` active basis functions summing to one.
//! The curve is not clamped: endpoint positions and velocities are whatever
//! the control points make them, and callers that need fixed endpoints impose
//! them as constraints.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::scalar::Scalar;
use crate::Point2;

/// Highest supported degree.
pub const MAX_DEGREE: usize = 5;
/// Highest derivative order returned by [`SplinePath::basis`].
pub const MAX_DERIV: usize = 3;
/// Below this speed turn rate and curvature are undefined.
pub const V_EPS: f64 = 1e-6;

const GL5_NODES: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683,
    0.0,
    0.538_469_310_105_683,
    0.906_179_845_938_664,
];
const GL5_WEIGHTS: [f64; 5] = [
    0.236_926_885_056_189,
    0.478_628_670_499_366,
    0.568_888_888_888_889,
    0.478_628_670_499_366,
    0.236_926_885_056_189,
];

/// Minimum number of quadrature sub-intervals for [`SplinePath::arc_length`].
pub const ARC_SUBINTERVALS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplinePath<T = f64> {
    degree: usize,
    control: Vec<Point<T>>,
    t0: T,
    tf: T,
}

/// Non-zero basis functions (and their time derivatives) at one parameter value.
#[derive(Debug, Clone, Copy)]
pub struct BasisEval<T> {
    /// Index of the first active control point.
    pub first: usize,
    /// `ders[d][j]`: d-th time derivative of basis `first + j`.
    pub ders: [[T; MAX_DEGREE + 1]; MAX_DERIV + 1],
    pub count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KinematicSample<T = f64> {
    pub t: T,
    pub position: Point<T>,
    /// Speed, m/s.
    pub v: T,
    /// Turn rate, rad/s.
    pub u: T,
    /// Signed curvature, 1/m.
    pub kappa: T,
}

impl<T: Scalar> SplinePath<T> {
    pub fn new(degree: usize, control: Vec<Point<T>>, t0: T, tf: T) -> Result<Self> {
        if degree == 0 || degree > MAX_DEGREE {
            return Err(Error::param(format!("degree {degree} outside 1..={MAX_DEGREE}")));
        }
        if control.len() < degree + 1 {
            return Err(Error::param(format!(
                "{} control points cannot carry a degree-{degree} spline",
                control.len()
            )));
        }
        if !(t0 < tf) || !t0.is_finite() || !tf.is_finite() {
            return Err(Error::param(format!("empty horizon [{t0}, {tf}]")));
        }
        if control.iter().any(|c| !c.is_finite()) {
            return Err(Error::param("non-finite control point"));
        }
        Ok(Self {
            degree,
            control,
            t0,
            tf,
        })
    }

    /// Straight, constant-speed spline from `a` at `t0` to `b` at `tf`.
    ///
    /// Control points sit on the line at their Greville abscissae, which the
    /// spline reproduces exactly.
    pub fn line(a: Point<T>, b: Point<T>, degree: usize, n_control: usize, t0: T, tf: T) -> Result<Self> {
        let mut s = Self::new(degree, vec![a; n_control.max(degree + 1)], t0, tf)?;
        let spans = T::from_usize(s.spans()).unwrap();
        let half = T::from_usize(degree - 1).unwrap() * T::lit(0.5);
        for (i, c) in s.control.iter_mut().enumerate() {
            let f = (T::from_usize(i).unwrap() - half) / spans;
            *c = a.lerp(b, f);
        }
        Ok(s)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn control(&self) -> &[Point<T>] {
        &self.control
    }

    pub fn control_mut(&mut self) -> &mut [Point<T>] {
        &mut self.control
    }

    pub fn t0(&self) -> T {
        self.t0
    }

    pub fn tf(&self) -> T {
        self.tf
    }

    pub fn duration(&self) -> T {
        self.tf - self.t0
    }

    /// Number of knot intervals inside the horizon.
    pub fn spans(&self) -> usize {
        self.control.len() - self.degree
    }

    /// Knot spacing in seconds.
    pub fn dt(&self) -> T {
        self.duration() / T::from_usize(self.spans()).unwrap()
    }

    /// The full knot vector `(t0 - k dt, ..., t0, ..., tf, ..., tf + k dt)`.
    pub fn knots(&self) -> Vec<T> {
        (0..self.control.len() + self.degree + 1)
            .map(|j| self.knot(j))
            .collect()
    }

    #[inline]
    fn knot(&self, j: usize) -> T {
        self.t0 + (T::from_usize(j).unwrap() - T::from_usize(self.degree).unwrap()) * self.dt()
    }

    /// Same spline retimed onto `[t0, tf]`.
    pub fn with_horizon(&self, t0: T, tf: T) -> Result<Self> {
        Self::new(self.degree, self.control.clone(), t0, tf)
    }

    fn check_time(&self, t: T) -> Result<T> {
        let slack = T::lit(1e-9) * (T::one() + self.tf.abs().max(self.t0.abs()));
        if t.is_nan() || t < self.t0 - slack || t > self.tf + slack {
            return Err(Error::OutsideHorizon {
                t: t.as_f64(),
                t0: self.t0.as_f64(),
                tf: self.tf.as_f64(),
            });
        }
        Ok(t.max(self.t0).min(self.tf))
    }

    /// Cox-de Boor basis values and up to `n_ders` derivatives at `t`.
    pub fn basis(&self, t: T, n_ders: usize) -> Result<BasisEval<T>> {
        let t = self.check_time(t)?;
        Ok(self.basis_unchecked(t, n_ders.min(MAX_DERIV)))
    }

    /// Basis evaluation for `t` already inside the horizon.
    pub fn basis_unchecked(&self, t: T, n_ders: usize) -> BasisEval<T> {
        let p = self.degree;
        let spans = self.spans();
        let rel = ((t - self.t0) / self.dt()).floor();
        let s = rel.to_usize().unwrap_or(0).min(spans - 1);
        let i = s + p;
        let zero = T::zero();

        let mut ndu = [[zero; MAX_DEGREE + 1]; MAX_DEGREE + 1];
        let mut left = [zero; MAX_DEGREE + 1];
        let mut right = [zero; MAX_DEGREE + 1];
        ndu[0][0] = T::one();
        for j in 1..=p {
            left[j] = t - self.knot(i + 1 - j);
            right[j] = self.knot(i + j) - t;
            let mut saved = zero;
            for r in 0..j {
                ndu[j][r] = right[r + 1] + left[j - r];
                let temp = ndu[r][j - 1] / ndu[j][r];
                ndu[r][j] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            ndu[j][j] = saved;
        }

        let mut ders = [[zero; MAX_DEGREE + 1]; MAX_DERIV + 1];
        for j in 0..=p {
            ders[0][j] = ndu[j][p];
        }
        let n = n_ders.min(p);
        let mut a = [[zero; MAX_DEGREE + 1]; 2];
        for r in 0..=p {
            let (mut s1, mut s2) = (0usize, 1usize);
            a[0][0] = T::one();
            for k in 1..=n {
                let mut d = zero;
                let rk = r as isize - k as isize;
                let pk = p - k;
                if r >= k {
                    a[s2][0] = a[s1][0] / ndu[pk + 1][rk as usize];
                    d = a[s2][0] * ndu[rk as usize][pk];
                }
                let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
                let j2 = if (r as isize) - 1 <= pk as isize { k - 1 } else { p - r };
                for j in j1..=j2 {
                    let idx = (rk + j as isize) as usize;
                    a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][idx];
                    d = d + a[s2][j] * ndu[idx][pk];
                }
                if r <= pk {
                    a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
                    d = d + a[s2][k] * ndu[r][pk];
                }
                ders[k][r] = d;
                std::mem::swap(&mut s1, &mut s2);
            }
        }
        let mut fac = T::from_usize(p).unwrap();
        for k in 1..=n {
            for v in ders[k].iter_mut().take(p + 1) {
                *v = *v * fac;
            }
            fac = fac * T::from_usize(p - k).unwrap();
        }
        BasisEval {
            first: s,
            ders,
            count: p + 1,
        }
    }

    #[inline]
    /// `order`-th derivative of the curve from a basis evaluation.
    pub fn combine(&self, b: &BasisEval<T>, order: usize) -> Point<T> {
        let mut acc = Point::zero();
        for j in 0..b.count {
            acc = acc + self.control[b.first + j] * b.ders[order][j];
        }
        acc
    }

    pub fn eval(&self, t: T) -> Result<Point<T>> {
        let b = self.basis(t, 0)?;
        Ok(self.combine(&b, 0))
    }

    /// Velocity and acceleration vectors at `t`.
    pub fn derivatives(&self, t: T) -> Result<(Point<T>, Point<T>)> {
        let b = self.basis(t, 2)?;
        Ok((self.combine(&b, 1), self.combine(&b, 2)))
    }

    /// Position, speed, turn rate and curvature at `t`.
    pub fn kinematics(&self, t: T) -> Result<KinematicSample<T>> {
        let b = self.basis(t, 2)?;
        let pos = self.combine(&b, 0);
        let vel = self.combine(&b, 1);
        let acc = self.combine(&b, 2);
        let v = vel.norm();
        if v <= T::lit(V_EPS) {
            return Err(Error::DegenerateVelocity(v.as_f64()));
        }
        let u = vel.cross(acc) / (v * v);
        Ok(KinematicSample {
            t,
            position: pos,
            v,
            u,
            kappa: u / v,
        })
    }

    /// Gauss-Legendre nodes and weights covering the horizon.
    ///
    /// Sub-intervals are aligned with the knot spans (each span split evenly)
    /// and number at least [`ARC_SUBINTERVALS`].
    pub fn quadrature(&self) -> Vec<(T, T)> {
        let spans = self.spans();
        let per_span = ARC_SUBINTERVALS.div_ceil(spans).max(1);
        let n_sub = spans * per_span;
        let h = self.duration() / T::from_usize(n_sub).unwrap();
        let mut out = Vec::with_capacity(n_sub * 5);
        for s in 0..n_sub {
            let a = self.t0 + h * T::from_usize(s).unwrap();
            let mid = a + h * T::lit(0.5);
            for (x, w) in GL5_NODES.iter().zip(GL5_WEIGHTS.iter()) {
                out.push((mid + h * T::lit(0.5 * x), h * T::lit(0.5 * w)));
            }
        }
        out
    }

    /// Path length over the horizon by composite five-point Gauss-Legendre.
    pub fn arc_length(&self) -> T {
        self.quadrature()
            .into_iter()
            .map(|(t, w)| {
                let b = self.basis_unchecked(t, 1);
                self.combine(&b, 1).norm() * w
            })
            .fold(T::zero(), |a, b| a + b)
    }

    /// Points at `t0, t0 + step, ...` up to and including `tf` when it falls on the grid.
    pub fn sample_times(&self, step: T) -> Vec<T> {
        sample_times(self.t0, self.tf, step)
    }
}

/// `t0, t0 + step, ..., <= tf` (with a small tolerance for `tf` itself).
pub fn sample_times<T: Scalar>(t0: T, tf: T, step: T) -> Vec<T> {
    let n = ((tf - t0) / step + T::lit(1e-9)).floor().to_usize().unwrap_or(0);
    (0..=n).map(|j| t0 + step * T::from_usize(j).unwrap()).collect()
}

/// Optional velocity conditions for [`fit_to_polyline`].
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EndVelocities {
    pub start: Option<Point2>,
    pub end: Option<Point2>,
}

/// Largest spacing of the arc-length samples drawn from the polyline, meters.
/// Short polylines are sampled more densely, at least four samples per control point.
pub const FIT_SAMPLE_SPACING: f64 = 1.0;

/// Least-squares fit of a spline to a polyline parameterised by arc length.
///
/// Endpoint positions (and any requested endpoint velocities) are imposed as
/// equality constraints, so they hold to rounding error.
pub fn fit_to_polyline(
    waypoints: &[Point2],
    degree: usize,
    n_control: usize,
    t0: f64,
    tf: f64,
    vel: EndVelocities,
) -> Result<SplinePath<f64>> {
    if waypoints.len() < 2 {
        return Err(Error::param("a polyline needs at least two waypoints"));
    }
    let total = polyline_length(waypoints);
    if !(total > 0.0) {
        return Err(Error::param("polyline has zero length"));
    }
    let spacing = FIT_SAMPLE_SPACING.min(total / (4 * n_control) as f64);
    let samples = resample_polyline(waypoints, spacing);
    let proto = SplinePath::new(degree, vec![waypoints[0]; n_control], t0, tf)?;
    let nc = n_control;

    let mut ata = DMatrix::<f64>::zeros(nc, nc);
    let mut atb = DMatrix::<f64>::zeros(nc, 2);
    for (s, p) in &samples {
        let t = t0 + (s / total) * (tf - t0);
        let b = proto.basis_unchecked(t.min(tf), 0);
        for a in 0..b.count {
            let ia = b.first + a;
            atb[(ia, 0)] += b.ders[0][a] * p.x;
            atb[(ia, 1)] += b.ders[0][a] * p.y;
            for c in 0..b.count {
                ata[(ia, b.first + c)] += b.ders[0][a] * b.ders[0][c];
            }
        }
    }
    // light second-difference smoothing keeps control points without samples determined
    let reg = 1e-6 * samples.len() as f64 / nc as f64;
    for i in 1..nc.saturating_sub(1) {
        let idx = [i - 1, i, i + 1];
        let w = [1.0, -2.0, 1.0];
        for (a, wa) in idx.iter().zip(w) {
            for (b, wb) in idx.iter().zip(w) {
                ata[(*a, *b)] += reg * wa * wb;
            }
        }
    }

    let mut rows: Vec<(BasisEval<f64>, usize, Point2)> = vec![
        (proto.basis_unchecked(t0, 1), 0, waypoints[0]),
        (proto.basis_unchecked(tf, 1), 0, *waypoints.last().unwrap()),
    ];
    if let Some(v) = vel.start {
        rows.push((proto.basis_unchecked(t0, 1), 1, v));
    }
    if let Some(v) = vel.end {
        rows.push((proto.basis_unchecked(tf, 1), 1, v));
    }
    let m = rows.len();
    let mut kkt = DMatrix::<f64>::zeros(nc + m, nc + m);
    let mut rhs = DMatrix::<f64>::zeros(nc + m, 2);
    kkt.view_mut((0, 0), (nc, nc)).copy_from(&(ata * 2.0));
    rhs.view_mut((0, 0), (nc, 2)).copy_from(&(atb * 2.0));
    for (r, (b, order, target)) in rows.iter().enumerate() {
        for j in 0..b.count {
            let v = b.ders[*order][j];
            kkt[(nc + r, b.first + j)] = v;
            kkt[(b.first + j, nc + r)] = v;
        }
        rhs[(nc + r, 0)] = target.x;
        rhs[(nc + r, 1)] = target.y;
    }
    let lu = kkt.lu();
    let sol = lu
        .solve(&rhs)
        .ok_or_else(|| Error::param("singular least-squares system in spline fit"))?;
    let control = (0..nc).map(|i| Point2::new(sol[(i, 0)], sol[(i, 1)])).collect();
    SplinePath::new(degree, control, t0, tf)
}

pub fn polyline_length(pts: &[Point2]) -> f64 {
    pts.windows(2).map(|w| w[0].dist(w[1])).sum()
}

/// Arc-length samples `(s, point)` at roughly `spacing` meters, vertices included.
pub fn resample_polyline(pts: &[Point2], spacing: f64) -> Vec<(f64, Point2)> {
    let mut out = vec![(0.0, pts[0])];
    let mut s = 0.0;
    for w in pts.windows(2) {
        let len = w[0].dist(w[1]);
        if len == 0.0 {
            continue;
        }
        let k = (len / spacing).ceil().max(1.0) as usize;
        for j in 1..=k {
            let f = j as f64 / k as f64;
            out.push((s + f * len, w[0].lerp(w[1], f)));
        }
        s += len;
    }
    out
}

/// Dense samples of the spline at uniform times, for plotting and checks.
pub fn polyline_of(path: &SplinePath<f64>, n: usize) -> Vec<Point2> {
    let n = n.max(2);
    (0..n)
        .map(|i| {
            let t = path.t0() + path.duration() * i as f64 / (n - 1) as f64;
            let b = path.basis_unchecked(t.min(path.tf()), 0);
            path.combine(&b, 0)
        })
        .collect()
}
