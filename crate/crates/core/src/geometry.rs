//! Planar primitives: points, segments, rectangular domains and uniform grids.

use std::ops::{Add, Div, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Distance below which a point counts as lying on a segment.
pub const ON_SEGMENT_TOL: f64 = 1e-9;

/// A point (or displacement) in the plane; `x` east, `y` north, meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point<T> {
    pub x: T,
    pub y: T,
}

impl<T: Scalar> Point<T> {
    pub fn new(x: T, y: T) -> Self {
        Self { x, y }
    }

    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero())
    }

    pub fn dot(self, o: Self) -> T {
        self.x * o.x + self.y * o.y
    }

    /// Scalar 2-D cross product `self.x * o.y - self.y * o.x`.
    pub fn cross(self, o: Self) -> T {
        self.x * o.y - self.y * o.x
    }

    pub fn norm_sq(self) -> T {
        self.dot(self)
    }

    pub fn norm(self) -> T {
        self.x.hypot(self.y)
    }

    pub fn dist(self, o: Self) -> T {
        (self - o).norm()
    }

    pub fn dist_sq(self, o: Self) -> T {
        (self - o).norm_sq()
    }

    /// Unit vector in the same direction, or `None` for a (near) zero vector.
    pub fn normalized(self) -> Option<Self> {
        let n = self.norm();
        if n > T::epsilon() {
            Some(self / n)
        } else {
            None
        }
    }

    /// Counter-clockwise perpendicular.
    pub fn perp(self) -> Self {
        Self::new(-self.y, self.x)
    }

    pub fn lerp(self, o: Self, t: T) -> Self {
        self + (o - self) * t
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl<T: Scalar> Add for Point<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y)
    }
}

impl<T: Scalar> Sub for Point<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y)
    }
}

impl<T: Scalar> Mul<T> for Point<T> {
    type Output = Self;
    fn mul(self, s: T) -> Self {
        Self::new(self.x * s, self.y * s)
    }
}

impl<T: Scalar> Div<T> for Point<T> {
    type Output = Self;
    fn div(self, s: T) -> Self {
        Self::new(self.x / s, self.y / s)
    }
}

impl<T: Scalar> Neg for Point<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y)
    }
}

/// A non-degenerate directed line segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Segment<T> {
    a: Point<T>,
    b: Point<T>,
}

impl<T: Scalar> Segment<T> {
    pub fn new(a: Point<T>, b: Point<T>) -> Result<Self> {
        if !a.is_finite() || !b.is_finite() {
            return Err(Error::InvalidGeometry("non-finite segment endpoint".into()));
        }
        if a == b {
            return Err(Error::InvalidGeometry(format!(
                "zero-length segment at ({}, {})",
                a.x, a.y
            )));
        }
        Ok(Self { a, b })
    }

    pub fn a(&self) -> Point<T> {
        self.a
    }

    pub fn b(&self) -> Point<T> {
        self.b
    }

    pub fn length(&self) -> T {
        self.a.dist(self.b)
    }

    pub fn midpoint(&self) -> Point<T> {
        self.a.lerp(self.b, T::lit(0.5))
    }

    /// Unit direction from `a` to `b`.
    pub fn direction(&self) -> Point<T> {
        (self.b - self.a) / self.length()
    }
}

/// Projection factor of `p` onto the infinite line through `s`, unclamped.
pub fn project_factor<T: Scalar>(p: Point<T>, s: &Segment<T>) -> T {
    let ab = s.b - s.a;
    (p - s.a).dot(ab) / ab.norm_sq()
}

/// Euclidean distance from `p` to the closed segment `s`.
pub fn point_segment_distance<T: Scalar>(p: Point<T>, s: &Segment<T>) -> T {
    point_segment_distance_sq(p, s).sqrt()
}

pub fn point_segment_distance_sq<T: Scalar>(p: Point<T>, s: &Segment<T>) -> T {
    let t = project_factor(p, s);
    if t < T::zero() {
        p.dist_sq(s.a)
    } else if t > T::one() {
        p.dist_sq(s.b)
    } else {
        p.dist_sq(s.a.lerp(s.b, t))
    }
}

pub fn on_segment<T: Scalar>(p: Point<T>, s: &Segment<T>) -> bool {
    point_segment_distance(p, s) <= T::lit(ON_SEGMENT_TOL)
}

/// Distance from `p` to the nearest segment in `edges`.
pub fn min_distance_to_edge_set<T: Scalar>(p: Point<T>, edges: &[Segment<T>]) -> Result<T> {
    nearest_edge(p, edges).map(|(_, d)| d)
}

/// Index of and distance to the nearest segment; ties go to the lowest index.
pub fn nearest_edge<T: Scalar>(p: Point<T>, edges: &[Segment<T>]) -> Result<(usize, T)> {
    let mut best: Option<(usize, T)> = None;
    for (i, e) in edges.iter().enumerate() {
        let d = point_segment_distance_sq(p, e);
        match best {
            Some((_, bd)) if d >= bd => {}
            _ => best = Some((i, d)),
        }
    }
    best.map(|(i, d)| (i, d.sqrt())).ok_or(Error::EmptyEdgeSet)
}

/// Axis-aligned rectangle `[x_min, x_max] x [y_min, y_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RectDomain<T> {
    pub x_min: T,
    pub x_max: T,
    pub y_min: T,
    pub y_max: T,
}

impl<T: Scalar> RectDomain<T> {
    pub fn new(x_min: T, x_max: T, y_min: T, y_max: T) -> Result<Self> {
        let d = Self {
            x_min,
            x_max,
            y_min,
            y_max,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.x_min < self.x_max && self.y_min < self.y_max) {
            return Err(Error::InvalidGeometry(format!(
                "empty domain [{}, {}] x [{}, {}]",
                self.x_min, self.x_max, self.y_min, self.y_max
            )));
        }
        Ok(())
    }

    /// Square `[0, side] x [0, side]`.
    pub fn square(side: T) -> Result<Self> {
        Self::new(T::zero(), side, T::zero(), side)
    }

    pub fn width(&self) -> T {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> T {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> T {
        self.width() * self.height()
    }

    pub fn center(&self) -> Point<T> {
        Point::new(
            (self.x_min + self.x_max) * T::lit(0.5),
            (self.y_min + self.y_max) * T::lit(0.5),
        )
    }

    pub fn contains(&self, p: Point<T>) -> bool {
        p.x >= self.x_min && p.x <= self.x_max && p.y >= self.y_min && p.y <= self.y_max
    }

    pub fn clamp(&self, p: Point<T>) -> Point<T> {
        Point::new(p.x.max(self.x_min).min(self.x_max), p.y.max(self.y_min).min(self.y_max))
    }

    /// Maps unit-square coordinates onto the domain.
    pub fn from_unit(&self, u: T, v: T) -> Point<T> {
        Point::new(self.x_min + u * self.width(), self.y_min + v * self.height())
    }
}

/// `nx x ny` cells tiling a [`RectDomain`]; cells are indexed row-major from the south-west.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniformGrid<T> {
    domain: RectDomain<T>,
    nx: usize,
    ny: usize,
}

impl<T: Scalar> UniformGrid<T> {
    pub fn new(domain: RectDomain<T>, nx: usize, ny: usize) -> Result<Self> {
        domain.validate()?;
        if nx == 0 || ny == 0 {
            return Err(Error::param(format!("grid resolution {nx}x{ny} must be positive")));
        }
        Ok(Self { domain, nx, ny })
    }

    pub fn domain(&self) -> &RectDomain<T> {
        &self.domain
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dx(&self) -> T {
        self.domain.width() / T::from_usize(self.nx).unwrap()
    }

    pub fn dy(&self) -> T {
        self.domain.height() / T::from_usize(self.ny).unwrap()
    }

    pub fn cell_area(&self) -> T {
        self.domain.area() / T::from_usize(self.len()).unwrap()
    }

    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx + ix
    }

    pub fn coords(&self, idx: usize) -> (usize, usize) {
        (idx % self.nx, idx / self.nx)
    }

    pub fn cell_center(&self, ix: usize, iy: usize) -> Point<T> {
        let half = T::lit(0.5);
        let fx = (T::from_usize(ix).unwrap() + half) / T::from_usize(self.nx).unwrap();
        let fy = (T::from_usize(iy).unwrap() + half) / T::from_usize(self.ny).unwrap();
        self.domain.from_unit(fx, fy)
    }

    /// Closed bounds of cell `(ix, iy)` as `(x0, x1, y0, y1)`.
    pub fn cell_bounds(&self, ix: usize, iy: usize) -> (T, T, T, T) {
        let w = T::from_usize(self.nx).unwrap();
        let h = T::from_usize(self.ny).unwrap();
        let fx0 = T::from_usize(ix).unwrap() / w;
        let fx1 = T::from_usize(ix + 1).unwrap() / w;
        let fy0 = T::from_usize(iy).unwrap() / h;
        let fy1 = T::from_usize(iy + 1).unwrap() / h;
        let d = &self.domain;
        (
            d.x_min + fx0 * d.width(),
            d.x_min + fx1 * d.width(),
            d.y_min + fy0 * d.height(),
            d.y_min + fy1 * d.height(),
        )
    }

    /// Cell centers in index order.
    pub fn centers(&self) -> impl Iterator<Item = Point<T>> + '_ {
        (0..self.len()).map(move |i| {
            let (ix, iy) = self.coords(i);
            self.cell_center(ix, iy)
        })
    }
}
