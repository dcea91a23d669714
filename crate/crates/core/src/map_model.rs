//! The uncertain vectorized map plus the ground-truth drivable area.

use crate::error::{Error, Result};
use crate::geometry::{MultiPolygon, Point2, Polyline};
use crate::scalar::Scalar;
use crate::uncertainty::{LaplacePoint, UncertainPolyline, B_MIN};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Upper bound on the number of elements in one map.
pub const MAX_MAP_ELEMENTS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapElementKind {
    Boundary,
    LaneDivider,
    PedCrossing,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapElement<T> {
    pub kind: MapElementKind,
    pub geometry: UncertainPolyline<T>,
}

impl<T> AsRef<UncertainPolyline<T>> for MapElement<T> {
    fn as_ref(&self) -> &UncertainPolyline<T> {
        &self.geometry
    }
}

/// Which element kinds the risk checks consume.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskElements {
    #[default]
    BoundariesOnly,
    AllKinds,
}

/// How [`perturb_map`] treats the Laplace scales.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbMode {
    /// Scales are set to the injected noise scale (clamped to the minimum).
    #[default]
    Calibrated,
    /// Scales are left as they were.
    FixedB,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UncertainMap<T> {
    pub elements: Vec<MapElement<T>>,
    pub drivable_area: MultiPolygon<T>,
}

impl<T: Scalar> UncertainMap<T> {
    pub fn new(elements: Vec<MapElement<T>>, drivable_area: MultiPolygon<T>) -> Result<Self> {
        if elements.len() > MAX_MAP_ELEMENTS {
            return Err(Error::invalid(format!(
                "map has {} elements, at most {MAX_MAP_ELEMENTS} allowed",
                elements.len()
            )));
        }
        Ok(Self {
            elements,
            drivable_area,
        })
    }

    /// Boundary elements in their original order.
    pub fn boundary_elements(&self) -> Vec<&UncertainPolyline<T>> {
        self.elements_for(RiskElements::BoundariesOnly)
    }

    pub fn elements_for(&self, which: RiskElements) -> Vec<&UncertainPolyline<T>> {
        self.elements
            .iter()
            .filter(|e| which == RiskElements::AllKinds || e.kind == MapElementKind::Boundary)
            .map(|e| &e.geometry)
            .collect()
    }

    /// Mean geometry of the selected elements.
    pub fn mean_polylines(&self, which: RiskElements) -> Result<Vec<Polyline<T>>> {
        self.elements_for(which).into_iter().map(|e| e.mean_polyline()).collect()
    }
}

/// Draws one sample from a zero-mean Laplace distribution by inverting its CDF.
pub fn sample_laplace<R: Rng + ?Sized>(rng: &mut R, scale: f64) -> f64 {
    if scale == 0.0 {
        return 0.0;
    }
    let u: f64 = rng.random::<f64>() - 0.5;
    // 1 - 2|u| lies in (0, 1] because random() is in [0, 1).
    -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

/// Displaces every vertex location by independent per-axis Laplace noise.
///
/// The drivable area is copied untouched. Output is a pure function of
/// `(map, noise_scale, seed, mode)`.
pub fn perturb_map<T: Scalar>(
    map: &UncertainMap<T>,
    noise_scale: f64,
    seed: u64,
    mode: PerturbMode,
) -> Result<UncertainMap<T>> {
    if !(noise_scale >= 0.0 && noise_scale.is_finite()) {
        return Err(Error::invalid(format!("noise scale must be finite and >= 0, got {noise_scale}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let calibrated_b = T::lit(noise_scale.max(B_MIN));
    let elements = map
        .elements
        .iter()
        .map(|e| {
            let points = e
                .geometry
                .points
                .iter()
                .map(|lp| {
                    let dx = T::lit(sample_laplace(&mut rng, noise_scale));
                    let dy = T::lit(sample_laplace(&mut rng, noise_scale));
                    let mu = Point2::new(lp.mu.x + dx, lp.mu.y + dy);
                    let b = match mode {
                        PerturbMode::Calibrated => [calibrated_b; 2],
                        PerturbMode::FixedB => lp.b,
                    };
                    LaplacePoint::new(mu, b)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(MapElement {
                kind: e.kind,
                geometry: UncertainPolyline::new(points)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    UncertainMap::new(elements, map.drivable_area.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Polygon;
    use crate::uncertainty::fit_laplace_mle;

    fn element(kind: MapElementKind, y: f64, n: usize) -> MapElement<f64> {
        let points = (0..n)
            .map(|i| LaplacePoint::isotropic(Point2::new(i as f64, y), 0.2).unwrap())
            .collect();
        MapElement {
            kind,
            geometry: UncertainPolyline::new(points).unwrap(),
        }
    }

    fn square_area() -> MultiPolygon<f64> {
        let pts = vec![
            Point2::new(0.0, -5.0),
            Point2::new(30.0, -5.0),
            Point2::new(30.0, 5.0),
            Point2::new(0.0, 5.0),
        ];
        MultiPolygon::new(vec![Polygon::new(pts, vec![]).unwrap()])
    }

    fn mixed_map() -> UncertainMap<f64> {
        use MapElementKind::*;
        let els = vec![
            element(LaneDivider, 0.0, 20),
            element(Boundary, -4.0, 20),
            element(LaneDivider, 1.0, 20),
            element(Boundary, 4.0, 20),
            element(PedCrossing, 2.0, 20),
        ];
        UncertainMap::new(els, square_area()).unwrap()
    }

    #[test]
    fn boundary_subset_preserves_order() {
        let map = mixed_map();
        let b = map.boundary_elements();
        assert_eq!(b.len(), 2);
        assert_eq!(b[0].points[0].mu.y, -4.0);
        assert_eq!(b[1].points[0].mu.y, 4.0);
        assert_eq!(map.elements_for(RiskElements::AllKinds).len(), 5);

        let none = UncertainMap::new(vec![element(MapElementKind::LaneDivider, 0.0, 3)], square_area()).unwrap();
        assert!(none.boundary_elements().is_empty());

        let many = UncertainMap::new(
            (0..100).map(|i| element(MapElementKind::Boundary, i as f64, 2)).collect(),
            square_area(),
        )
        .unwrap();
        assert_eq!(many.boundary_elements().len(), 100);
        let too_many = (0..101).map(|i| element(MapElementKind::Boundary, i as f64, 2)).collect();
        assert!(UncertainMap::new(too_many, square_area()).is_err());
    }

    #[test]
    fn boundary_and_rest_partition_elements() {
        let map = mixed_map();
        let rest = map.elements.iter().filter(|e| e.kind != MapElementKind::Boundary).count();
        assert_eq!(map.boundary_elements().len() + rest, map.elements.len());
    }

    #[test]
    fn zero_noise_keeps_locations() {
        let map = mixed_map();
        let out = perturb_map(&map, 0.0, 3, PerturbMode::Calibrated).unwrap();
        for (a, b) in map.elements.iter().zip(&out.elements) {
            for (p, q) in a.geometry.points.iter().zip(&b.geometry.points) {
                assert_eq!(p.mu, q.mu);
                assert_eq!(q.b, [B_MIN, B_MIN]);
            }
        }
        let fixed = perturb_map(&map, 0.0, 3, PerturbMode::FixedB).unwrap();
        assert_eq!(fixed, map);
    }

    #[test]
    fn perturbation_is_seeded_and_shape_preserving() {
        let map = mixed_map();
        let a = perturb_map(&map, 0.5, 42, PerturbMode::Calibrated).unwrap();
        let b = perturb_map(&map, 0.5, 42, PerturbMode::Calibrated).unwrap();
        let c = perturb_map(&map, 0.5, 43, PerturbMode::Calibrated).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.elements.len(), map.elements.len());
        assert_eq!(a.drivable_area, map.drivable_area);
        for (x, y) in a.elements.iter().zip(&map.elements) {
            assert_eq!(x.kind, y.kind);
            assert_eq!(x.geometry.len(), y.geometry.len());
        }
        assert!(perturb_map(&map, -0.1, 1, PerturbMode::Calibrated).is_err());
    }

    #[test]
    fn laplace_noise_mean_abs_matches_scale() {
        let map = UncertainMap::new(
            (0..5).map(|i| element(MapElementKind::Boundary, i as f64, 2000)).collect(),
            square_area(),
        )
        .unwrap();
        let out = perturb_map(&map, 0.5, 9, PerturbMode::Calibrated).unwrap();
        let deltas: Vec<f64> = map
            .elements
            .iter()
            .zip(&out.elements)
            .flat_map(|(a, b)| a.geometry.points.iter().zip(&b.geometry.points).map(|(p, q)| (q.mu.x - p.mu.x).abs()))
            .collect();
        assert_eq!(deltas.len(), 10_000);
        let mean = deltas.iter().sum::<f64>() / deltas.len() as f64;
        assert!((0.45..=0.55).contains(&mean), "mean |dx| = {mean}");
    }

    #[test]
    fn calibrated_perturbations_recover_truth() {
        let base = UncertainMap::new(vec![element(MapElementKind::Boundary, 3.0, 2)], square_area()).unwrap();
        let k = 400;
        let noise = 0.5;
        let obs: Vec<_> = (0..k)
            .map(|s| perturb_map(&base, noise, 1000 + s, PerturbMode::Calibrated).unwrap().elements[0].geometry.points[1].mu)
            .collect();
        let fit = fit_laplace_mle(&obs).unwrap();
        let tol = 3.0 * noise / (k as f64).sqrt();
        assert!((fit.mu.x - 1.0).abs() < tol && (fit.mu.y - 3.0).abs() < tol, "{fit:?}");
        assert!((fit.b[0] - noise).abs() < 0.15 * noise && (fit.b[1] - noise).abs() < 0.15 * noise, "{fit:?}");
    }
}
