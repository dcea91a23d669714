//! Planar primitives in ego-frame meters (x forward, y left).
//!
//! Containment is boundary-inclusive everywhere: a point lying exactly on a
//! ring edge is inside the polygon, including points on hole edges.

use crate::error::{Error, Result};
use crate::scalar::{normalize_angle, Scalar};
use serde::{Deserialize, Serialize};

/// Minimum separation between consecutive polyline vertices.
pub const MIN_VERTEX_SEPARATION: f64 = 1e-9;

/// Polygons with less area than this are rejected.
pub const MIN_POLYGON_AREA: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Point2<T> {
    pub x: T,
    pub y: T,
}

impl<T: Scalar> Point2<T> {
    pub fn new(x: T, y: T) -> Self {
        Self { x, y }
    }

    /// Like [`Point2::new`] but rejects NaN and infinite coordinates.
    pub fn checked(x: T, y: T) -> Result<Self> {
        let p = Self { x, y };
        if p.is_finite() {
            Ok(p)
        } else {
            Err(Error::invalid(format!("non-finite point ({x}, {y})")))
        }
    }

    pub fn origin() -> Self {
        Self::new(T::zero(), T::zero())
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn sub(self, other: Self) -> Self {
        Self::new(self.x - other.x, self.y - other.y)
    }

    pub fn add(self, other: Self) -> Self {
        Self::new(self.x + other.x, self.y + other.y)
    }

    pub fn scale(self, k: T) -> Self {
        Self::new(self.x * k, self.y * k)
    }

    pub fn dot(self, other: Self) -> T {
        self.x * other.x + self.y * other.y
    }

    pub fn cross(self, other: Self) -> T {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> T {
        self.x.hypot(self.y)
    }

    pub fn distance(self, other: Self) -> T {
        self.sub(other).norm()
    }

    /// Rotates the vector by `angle` radians counterclockwise.
    pub fn rotate(self, angle: T) -> Self {
        let (s, c) = angle.sin_cos();
        Self::new(self.x * c - self.y * s, self.x * s + self.y * c)
    }
}

/// Position plus heading; the heading is kept in `(-π, π]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Pose2<T> {
    pub position: Point2<T>,
    pub heading: T,
}

impl<T: Scalar> Pose2<T> {
    pub fn new(position: Point2<T>, heading: T) -> Self {
        Self {
            position,
            heading: normalize_angle(heading),
        }
    }

    pub fn from_xyh(x: T, y: T, heading: T) -> Self {
        Self::new(Point2::new(x, y), heading)
    }
}

/// Returns the four footprint corners of a vehicle at `pose`, counterclockwise
/// starting from the front-left corner.
pub fn vehicle_corners<T: Scalar>(pose: &Pose2<T>, length: T, width: T) -> Result<[Point2<T>; 4]> {
    if !(length > T::zero() && width > T::zero()) {
        return Err(Error::invalid(format!(
            "vehicle dimensions must be positive, got length {length} width {width}"
        )));
    }
    Ok(box_corners(pose.position, pose.heading, length, width))
}

fn box_corners<T: Scalar>(center: Point2<T>, heading: T, length: T, width: T) -> [Point2<T>; 4] {
    let half = T::lit(0.5);
    let (hl, hw) = (length * half, width * half);
    let local = [
        Point2::new(hl, hw),
        Point2::new(-hl, hw),
        Point2::new(-hl, -hw),
        Point2::new(hl, -hw),
    ];
    local.map(|p| center.add(p.rotate(heading)))
}

/// An open chain of at least two vertices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Polyline<T> {
    points: Vec<Point2<T>>,
}

impl<T: Scalar> Polyline<T> {
    pub fn new(points: Vec<Point2<T>>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::invalid(format!(
                "polyline needs at least 2 points, got {}",
                points.len()
            )));
        }
        if let Some(p) = points.iter().find(|p| !p.is_finite()) {
            return Err(Error::invalid(format!("non-finite polyline vertex {p:?}")));
        }
        let min_sep = T::lit(MIN_VERTEX_SEPARATION);
        for (i, w) in points.windows(2).enumerate() {
            if w[0].distance(w[1]) <= min_sep {
                return Err(Error::invalid(format!(
                    "polyline vertices {i} and {} coincide",
                    i + 1
                )));
            }
        }
        Ok(Self { points })
    }

    /// Builds a polyline after dropping vertices that coincide with their
    /// predecessor. Fails if fewer than two distinct vertices remain.
    pub fn new_dedup(points: impl IntoIterator<Item = Point2<T>>) -> Result<Self> {
        let min_sep = T::lit(MIN_VERTEX_SEPARATION);
        let mut kept: Vec<Point2<T>> = Vec::new();
        for p in points {
            if kept.last().is_none_or(|q| q.distance(p) > min_sep) {
                kept.push(p);
            }
        }
        Self::new(kept)
    }

    pub fn points(&self) -> &[Point2<T>] {
        &self.points
    }

    pub fn segments(&self) -> impl Iterator<Item = (Point2<T>, Point2<T>)> + '_ {
        self.points.windows(2).map(|w| (w[0], w[1]))
    }

    pub fn reversed(&self) -> Self {
        let mut points = self.points.clone();
        points.reverse();
        Self { points }
    }
}

/// Euclidean distance from `p` to the closed segment `a`–`b`.
pub fn dist_point_segment<T: Scalar>(p: Point2<T>, a: Point2<T>, b: Point2<T>) -> T {
    // Fixed endpoint order makes the rounding independent of direction.
    let (a, b) = if (b.x, b.y) < (a.x, a.y) { (b, a) } else { (a, b) };
    let ab = b.sub(a);
    let len2 = ab.dot(ab);
    if len2 <= T::zero() {
        return p.distance(a);
    }
    let t = (p.sub(a).dot(ab) / len2).max(T::zero()).min(T::one());
    p.distance(a.add(ab.scale(t)))
}

/// Minimum distance from `p` to any segment of `line`.
pub fn dist_point_polyline<T: Scalar>(p: Point2<T>, line: &Polyline<T>) -> T {
    line.segments()
        .map(|(a, b)| dist_point_segment(p, a, b))
        .fold(T::infinity(), T::min)
}

/// Twice the signed area of a closed ring (positive when counterclockwise).
fn ring_signed_area2<T: Scalar>(ring: &[Point2<T>]) -> T {
    ring.windows(2).map(|w| w[0].cross(w[1])).sum()
}

fn segments_intersect<T: Scalar>(a: Point2<T>, b: Point2<T>, c: Point2<T>, d: Point2<T>) -> bool {
    let orient = |p: Point2<T>, q: Point2<T>, r: Point2<T>| q.sub(p).cross(r.sub(p));
    let within = |p: Point2<T>, q: Point2<T>, r: Point2<T>| {
        r.x >= p.x.min(q.x) && r.x <= p.x.max(q.x) && r.y >= p.y.min(q.y) && r.y <= p.y.max(q.y)
    };
    let (d1, d2) = (orient(c, d, a), orient(c, d, b));
    let (d3, d4) = (orient(a, b, c), orient(a, b, d));
    let z = T::zero();
    if ((d1 > z && d2 < z) || (d1 < z && d2 > z)) && ((d3 > z && d4 < z) || (d3 < z && d4 > z)) {
        return true;
    }
    (d1 == z && within(c, d, a))
        || (d2 == z && within(c, d, b))
        || (d3 == z && within(a, b, c))
        || (d4 == z && within(a, b, d))
}

/// Closes the ring, checks it is simple and non-degenerate, and orients it.
fn normalize_ring<T: Scalar>(mut ring: Vec<Point2<T>>, ccw: bool, what: &str) -> Result<Vec<Point2<T>>> {
    if let Some(p) = ring.iter().find(|p| !p.is_finite()) {
        return Err(Error::invalid(format!("{what}: non-finite vertex {p:?}")));
    }
    if ring.first() != ring.last() {
        if let Some(&first) = ring.first() {
            ring.push(first);
        }
    }
    if ring.len() < 4 {
        return Err(Error::invalid(format!("{what}: ring needs at least 3 distinct vertices")));
    }
    let area2 = ring_signed_area2(&ring);
    if area2.abs() * T::lit(0.5) < T::lit(MIN_POLYGON_AREA) {
        return Err(Error::invalid(format!("{what}: degenerate ring (area {})", area2.abs() * T::lit(0.5))));
    }
    let n = ring.len() - 1;
    for i in 0..n {
        if ring[i] == ring[i + 1] {
            return Err(Error::invalid(format!("{what}: repeated vertex at {i}")));
        }
        for j in (i + 1)..n {
            // Adjacent edges share a vertex; the first and last edge too.
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                continue;
            }
            if segments_intersect(ring[i], ring[i + 1], ring[j], ring[j + 1]) {
                return Err(Error::invalid(format!("{what}: edges {i} and {j} intersect")));
            }
        }
    }
    if (area2 > T::zero()) != ccw {
        ring.reverse();
    }
    Ok(ring)
}

/// A simple polygon with optional holes. The outer ring is stored
/// counterclockwise and holes clockwise, each closed (first == last).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Polygon<T> {
    outer: Vec<Point2<T>>,
    holes: Vec<Vec<Point2<T>>>,
}

impl<T: Scalar> Polygon<T> {
    /// Accepts open or closed rings of either orientation.
    pub fn new(outer: Vec<Point2<T>>, holes: Vec<Vec<Point2<T>>>) -> Result<Self> {
        let outer = normalize_ring(outer, true, "outer ring")?;
        let holes = holes
            .into_iter()
            .enumerate()
            .map(|(i, h)| normalize_ring(h, false, &format!("hole {i}")))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { outer, holes })
    }

    /// Checks that a deserialized polygon already satisfies the ring
    /// invariants (closed, simple, non-degenerate, outer CCW, holes CW).
    pub fn validate(&self) -> Result<()> {
        let normalized = Self::new(self.outer.clone(), self.holes.clone())?;
        if normalized.outer != self.outer {
            return Err(Error::invalid("outer ring must be closed and counterclockwise"));
        }
        if normalized.holes != self.holes {
            return Err(Error::invalid("hole rings must be closed and clockwise"));
        }
        Ok(())
    }

    pub fn outer(&self) -> &[Point2<T>] {
        &self.outer
    }

    pub fn holes(&self) -> &[Vec<Point2<T>>] {
        &self.holes
    }

    pub fn rings(&self) -> impl Iterator<Item = &[Point2<T>]> {
        std::iter::once(self.outer.as_slice()).chain(self.holes.iter().map(Vec::as_slice))
    }

    pub fn area(&self) -> T {
        let half = T::lit(0.5);
        let holes: T = self.holes.iter().map(|h| ring_signed_area2(h).abs() * half).sum();
        ring_signed_area2(&self.outer).abs() * half - holes
    }

    pub fn contains(&self, p: Point2<T>) -> bool {
        if self.rings().any(|r| on_ring_boundary(p, r)) {
            return true;
        }
        crossing_parity(p, &self.outer) && !self.holes.iter().any(|h| crossing_parity(p, h))
    }
}

fn on_ring_boundary<T: Scalar>(p: Point2<T>, ring: &[Point2<T>]) -> bool {
    ring.windows(2).any(|w| {
        let (a, b) = (w[0], w[1]);
        b.sub(a).cross(p.sub(a)) == T::zero()
            && p.x >= a.x.min(b.x)
            && p.x <= a.x.max(b.x)
            && p.y >= a.y.min(b.y)
            && p.y <= a.y.max(b.y)
    })
}

/// Even-odd crossing test with a horizontal ray towards +x.
fn crossing_parity<T: Scalar>(p: Point2<T>, ring: &[Point2<T>]) -> bool {
    let mut inside = false;
    for w in ring.windows(2) {
        let (a, b) = (w[0], w[1]);
        if (a.y > p.y) != (b.y > p.y) {
            let x_cross = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if p.x < x_cross {
                inside = !inside;
            }
        }
    }
    inside
}

/// A list of disjoint polygons.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiPolygon<T> {
    polygons: Vec<Polygon<T>>,
}

impl<T: Scalar> MultiPolygon<T> {
    pub fn new(polygons: Vec<Polygon<T>>) -> Self {
        Self { polygons }
    }

    pub fn polygons(&self) -> &[Polygon<T>] {
        &self.polygons
    }

    pub fn is_empty(&self) -> bool {
        self.polygons.is_empty()
    }
}

/// Boundary-inclusive membership of `p` in any polygon of `area`.
pub fn point_in_multipolygon<T: Scalar>(p: Point2<T>, area: &MultiPolygon<T>) -> bool {
    area.polygons.iter().any(|poly| poly.contains(p))
}

/// A rectangle with arbitrary heading. `length` runs along the heading.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox<T> {
    pub center: Point2<T>,
    pub heading: T,
    pub length: T,
    pub width: T,
}

impl<T: Scalar> OrientedBox<T> {
    pub fn new(center: Point2<T>, heading: T, length: T, width: T) -> Result<Self> {
        if !(length > T::zero() && width > T::zero()) {
            return Err(Error::invalid(format!(
                "box dimensions must be positive, got length {length} width {width}"
            )));
        }
        if !center.is_finite() || !heading.is_finite() || !length.is_finite() || !width.is_finite() {
            return Err(Error::invalid("non-finite box parameters"));
        }
        Ok(Self {
            center,
            heading,
            length,
            width,
        })
    }

    pub fn from_pose(pose: &Pose2<T>, length: T, width: T) -> Result<Self> {
        Self::new(pose.position, pose.heading, length, width)
    }

    pub fn corners(&self) -> [Point2<T>; 4] {
        box_corners(self.center, self.heading, self.length, self.width)
    }

    /// Grows the box by `margin` on every side.
    pub fn inflated(&self, margin: T) -> Result<Self> {
        let two = T::lit(2.0);
        Self::new(
            self.center,
            self.heading,
            self.length + two * margin,
            self.width + two * margin,
        )
    }

    fn axes(&self) -> [Point2<T>; 2] {
        let (s, c) = self.heading.sin_cos();
        [Point2::new(c, s), Point2::new(-s, c)]
    }
}

fn project<T: Scalar>(corners: &[Point2<T>; 4], axis: Point2<T>) -> (T, T) {
    corners.iter().fold((T::infinity(), T::neg_infinity()), |(lo, hi), c| {
        let d = c.dot(axis);
        (lo.min(d), hi.max(d))
    })
}

/// Separating-axis overlap test. Touching boxes overlap.
pub fn boxes_overlap<T: Scalar>(a: &OrientedBox<T>, b: &OrientedBox<T>) -> bool {
    let (ca, cb) = (a.corners(), b.corners());
    a.axes().into_iter().chain(b.axes()).all(|axis| {
        let (amin, amax) = project(&ca, axis);
        let (bmin, bmax) = project(&cb, axis);
        amax >= bmin && bmax >= amin
    })
}
