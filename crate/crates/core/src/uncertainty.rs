//! Per-point Laplace uncertainty for vectorized map elements.
//!
//! Each map vertex carries a location `mu` and an independent scale per axis.
//! The density of a ground-truth location `p` is
//!
//! ```text
//! f(p | mu, b) = Π_j 1 / (2 b_j) · exp(-|p_j - mu_j| / b_j)
//! ```
//!
//! and the negative log-likelihood `Σ_j log(2 b_j) + |p_j - mu_j| / b_j`
//! is used both as a fitting objective and as a proximity-risk score. Lower
//! NLL means the query point sits inside the likely region of the vertex.

use crate::error::{Error, Result};
use crate::geometry::{Point2, Polyline};
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};

/// Smallest admissible Laplace scale, in meters.
pub const B_MIN: f64 = 1e-3;

/// Vertices per map element.
pub const DEFAULT_POINTS_PER_ELEMENT: usize = 20;

/// A map vertex with Laplace location and per-axis scale.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LaplacePoint<T> {
    pub mu: Point2<T>,
    pub b: [T; 2],
}

impl<T: Scalar> LaplacePoint<T> {
    /// Scales below [`B_MIN`] are raised to it; negative or non-finite
    /// scales are rejected.
    pub fn new(mu: Point2<T>, b: [T; 2]) -> Result<Self> {
        if !mu.is_finite() {
            return Err(Error::invalid(format!("non-finite location {mu:?}")));
        }
        for (axis, s) in b.iter().enumerate() {
            if !s.is_finite() || *s < T::zero() {
                return Err(Error::invalid(format!("scale b[{axis}] = {s} must be finite and non-negative")));
            }
        }
        Ok(Self {
            mu,
            b: b.map(clamp_scale),
        })
    }

    pub fn isotropic(mu: Point2<T>, b: T) -> Result<Self> {
        Self::new(mu, [b, b])
    }
}

fn clamp_scale<T: Scalar>(b: T) -> T {
    b.max(T::lit(B_MIN))
}

/// One map element: an ordered run of Laplace vertices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UncertainPolyline<T> {
    pub points: Vec<LaplacePoint<T>>,
}

impl<T: Scalar> UncertainPolyline<T> {
    pub fn new(points: Vec<LaplacePoint<T>>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::invalid(format!(
                "map element needs at least 2 points, got {}",
                points.len()
            )));
        }
        Ok(Self { points })
    }

    /// The element's mean geometry. Coincident consecutive locations are merged.
    pub fn mean_polyline(&self) -> Result<Polyline<T>> {
        Polyline::new_dedup(self.points.iter().map(|lp| lp.mu))
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Laplace NLL of a single ground-truth point, summed over both axes.
pub fn laplace_point_nll<T: Scalar>(gt: Point2<T>, lp: &LaplacePoint<T>) -> T {
    let two = T::lit(2.0);
    let axis = |p: T, mu: T, b: T| (two * b).ln() + (p - mu).abs() / b;
    axis(gt.x, lp.mu.x, lp.b[0]) + axis(gt.y, lp.mu.y, lp.b[1])
}

/// NLL of a whole element against index-matched ground-truth points.
pub fn element_nll<T: Scalar>(gt_points: &[Point2<T>], element: &UncertainPolyline<T>) -> Result<T> {
    if gt_points.len() != element.points.len() {
        return Err(Error::invalid(format!(
            "ground truth has {} points but element has {}",
            gt_points.len(),
            element.points.len()
        )));
    }
    Ok(gt_points
        .iter()
        .zip(&element.points)
        .map(|(gt, lp)| laplace_point_nll(*gt, lp))
        .sum())
}

/// Log of the joint element density; the negation of [`element_nll`].
pub fn log_joint_density<T: Scalar>(gt_points: &[Point2<T>], element: &UncertainPolyline<T>) -> Result<T> {
    element_nll(gt_points, element).map(|nll| -nll)
}

fn median<T: Scalar>(values: &mut [T]) -> T {
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite observations"));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) * T::lit(0.5)
    }
}

/// Closed-form Laplace maximum-likelihood fit: per-axis median for the
/// location and mean absolute deviation from it for the scale.
pub fn fit_laplace_mle<T: Scalar>(observations: &[Point2<T>]) -> Result<LaplacePoint<T>> {
    if observations.is_empty() {
        return Err(Error::invalid("cannot fit a Laplace point to zero observations"));
    }
    if let Some(p) = observations.iter().find(|p| !p.is_finite()) {
        return Err(Error::invalid(format!("non-finite observation {p:?}")));
    }
    let n = T::from_usize(observations.len()).expect("observation count fits the scalar type");
    let fit_axis = |get: fn(&Point2<T>) -> T| {
        let mut values: Vec<T> = observations.iter().map(get).collect();
        let m = median(&mut values);
        let mad = values.iter().map(|v| (*v - m).abs()).sum::<T>() / n;
        (m, mad)
    };
    let (mx, bx) = fit_axis(|p| p.x);
    let (my, by) = fit_axis(|p| p.y);
    LaplacePoint::new(Point2::new(mx, my), [bx, by])
}

/// Smallest per-vertex NLL of `p` over every vertex of every element.
pub fn min_nll_to_elements<T: Scalar, E>(p: Point2<T>, elements: &[E]) -> Result<T>
where
    E: AsRef<UncertainPolyline<T>>,
{
    let mut best: Option<T> = None;
    for lp in elements.iter().flat_map(|e| e.as_ref().points.iter()) {
        let nll = laplace_point_nll(p, lp);
        best = Some(best.map_or(nll, |b| b.min(nll)));
    }
    best.ok_or_else(|| Error::invalid("no map vertices to score against"))
}

impl<T> AsRef<UncertainPolyline<T>> for UncertainPolyline<T> {
    fn as_ref(&self) -> &UncertainPolyline<T> {
        self
    }
}
