//! Uncertainty-aware trajectory selection over vectorized maps.
//!
//! Map elements carry per-vertex Laplace uncertainty. A planner's
//! multi-modal candidates are filtered by how close they pass to uncertain
//! boundaries, by predicted agent collisions and by boundary clearance,
//! then the most confident survivor is chosen. The metrics module scores the
//! choice by displacement error, collision rate and drivable-area conflict
//! rate, and a synthetic scenario generator plus a CLI tie it together.

pub mod cli;
pub mod error;
pub mod geometry;
pub mod map_model;
pub mod metrics;
pub mod oracles;
pub mod scalar;
pub mod scenario;
pub mod selection;
pub mod uncertainty;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Point2d = geometry::Point2<f64>;
pub type Pose2d = geometry::Pose2<f64>;
pub type Polyline2d = geometry::Polyline<f64>;
pub type Polygon2d = geometry::Polygon<f64>;
pub type MultiPolygon2d = geometry::MultiPolygon<f64>;
pub type OrientedBox2d = geometry::OrientedBox<f64>;
pub type LaplacePointF64 = uncertainty::LaplacePoint<f64>;
pub type UncertainPolylineF64 = uncertainty::UncertainPolyline<f64>;
pub type UncertainMapF64 = map_model::UncertainMap<f64>;
pub type CandidateTrajectoryF64 = selection::CandidateTrajectory<f64>;
pub type CandidateSetF64 = selection::CandidateSet<f64>;

pub type Point2f = geometry::Point2<f32>;
pub type Pose2f = geometry::Pose2<f32>;
pub type LaplacePointF32 = uncertainty::LaplacePoint<f32>;
pub type UncertainMapF32 = map_model::UncertainMap<f32>;
pub type CandidateTrajectoryF32 = selection::CandidateTrajectory<f32>;
