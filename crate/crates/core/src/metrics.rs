//! Displacement error, collision rate and drivable area conflict rate.
//!
//! Horizons are expressed in steps of 0.5 s, so 1 s / 2 s / 3 s map to 2 / 4
//! / 6 waypoints. A timestep conflicts with the drivable area when any of the
//! four footprint corners lies outside it; the conflict rate over a horizon
//! of `h` steps is the number of conflicting steps divided by `h`.

use crate::error::{Error, Result};
use crate::geometry::{boxes_overlap, point_in_multipolygon, MultiPolygon, OrientedBox, Point2, Pose2};
use crate::scalar::{normalize_angle, Scalar};
use crate::selection::{CandidateTrajectory, EgoDims, HORIZON_STEPS};
use serde::{Deserialize, Serialize};
use std::fmt;

/// Step counts of the 1 s, 2 s and 3 s horizons.
pub const HORIZONS: [usize; 3] = [2, 4, 6];

/// GT heading change above which a scenario counts as a turn, in degrees.
pub const TURN_THRESHOLD_DEG: f64 = 15.0;

/// Cumulative (†) vs. instantaneous/endpoint (‡) metric convention.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricConvention {
    #[default]
    Cumulative,
    Instantaneous,
}

impl fmt::Display for MetricConvention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MetricConvention::Cumulative => "cumulative",
            MetricConvention::Instantaneous => "instantaneous",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioClass {
    Turn,
    Straight,
}

/// Applies the heading-change rule to a ground-truth ego future.
pub fn classify_future<T: Scalar>(future: &[Pose2<T>]) -> ScenarioClass {
    match (future.first(), future.last()) {
        (Some(a), Some(b)) => {
            let change = normalize_angle(b.heading - a.heading).abs();
            if change > T::lit(TURN_THRESHOLD_DEG.to_radians()) {
                ScenarioClass::Turn
            } else {
                ScenarioClass::Straight
            }
        }
        _ => ScenarioClass::Straight,
    }
}

/// Reference data a chosen trajectory is scored against.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth<T> {
    pub ego_future: Vec<Pose2<T>>,
    /// One box sequence per agent, aligned with the ego timestep grid.
    pub agent_futures: Vec<Vec<OrientedBox<T>>>,
    pub drivable_area: MultiPolygon<T>,
}

fn check_horizon(horizon_steps: usize, available: usize) -> Result<()> {
    if horizon_steps == 0 || horizon_steps > HORIZON_STEPS || horizon_steps > available {
        return Err(Error::invalid(format!(
            "horizon of {horizon_steps} steps outside [1, {}]",
            HORIZON_STEPS.min(available)
        )));
    }
    Ok(())
}

pub fn displacement_error<T: Scalar>(
    traj: &CandidateTrajectory<T>,
    gt: &GroundTruth<T>,
    horizon_steps: usize,
    convention: MetricConvention,
) -> Result<T> {
    check_horizon(horizon_steps, traj.waypoints.len().min(gt.ego_future.len()))?;
    let err = |t: usize| traj.waypoints[t].distance(gt.ego_future[t].position);
    Ok(match convention {
        MetricConvention::Cumulative => {
            (0..horizon_steps).map(err).sum::<T>() / T::from_usize(horizon_steps).expect("small count")
        }
        MetricConvention::Instantaneous => err(horizon_steps - 1),
    })
}

/// Whether the ego footprint at step `t` overlaps any ground-truth agent.
fn collides_at<T: Scalar>(traj: &CandidateTrajectory<T>, dims: &EgoDims<T>, gt: &GroundTruth<T>, t: usize) -> bool {
    let ego = traj.footprint(t, dims);
    gt.agent_futures.iter().any(|boxes| boxes_overlap(&ego, &boxes[t]))
}

pub fn collision_at_horizon<T: Scalar>(
    traj: &CandidateTrajectory<T>,
    dims: &EgoDims<T>,
    gt: &GroundTruth<T>,
    horizon_steps: usize,
    convention: MetricConvention,
) -> Result<bool> {
    check_horizon(horizon_steps, traj.waypoints.len())?;
    if let Some(bad) = gt.agent_futures.iter().find(|b| b.len() != traj.waypoints.len()) {
        return Err(Error::invalid(format!(
            "agent ground truth has {} steps, trajectory has {}",
            bad.len(),
            traj.waypoints.len()
        )));
    }
    Ok(match convention {
        MetricConvention::Cumulative => (0..horizon_steps).any(|t| collides_at(traj, dims, gt, t)),
        MetricConvention::Instantaneous => collides_at(traj, dims, gt, horizon_steps - 1),
    })
}

/// Whether any footprint corner at step `t` leaves the drivable area.
pub fn conflicts_at<T: Scalar>(traj: &CandidateTrajectory<T>, dims: &EgoDims<T>, da: &MultiPolygon<T>, t: usize) -> bool {
    traj.footprint(t, dims)
        .corners()
        .iter()
        .any(|c: &Point2<T>| !point_in_multipolygon(*c, da))
}

/// Fraction of the first `horizon_steps` steps in conflict with the drivable area.
pub fn dacr_frame<T: Scalar>(
    traj: &CandidateTrajectory<T>,
    dims: &EgoDims<T>,
    da: &MultiPolygon<T>,
    horizon_steps: usize,
) -> Result<T> {
    check_horizon(horizon_steps, traj.waypoints.len())?;
    let conflicts = (0..horizon_steps).filter(|&t| conflicts_at(traj, dims, da, t)).count();
    Ok(T::from_usize(conflicts).expect("small count") / T::from_usize(horizon_steps).expect("small count"))
}

/// Metric values for one scenario at the three horizons.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioMetrics {
    pub id: String,
    pub class: ScenarioClass,
    pub de: [f64; 3],
    pub collision: [bool; 3],
    pub dacr: [f64; 3],
}

pub fn evaluate_trajectory<T: Scalar>(
    id: &str,
    class: ScenarioClass,
    traj: &CandidateTrajectory<T>,
    dims: &EgoDims<T>,
    gt: &GroundTruth<T>,
    convention: MetricConvention,
) -> Result<ScenarioMetrics> {
    let mut m = ScenarioMetrics {
        id: id.to_owned(),
        class,
        de: [0.0; 3],
        collision: [false; 3],
        dacr: [0.0; 3],
    };
    for (k, &h) in HORIZONS.iter().enumerate() {
        m.de[k] = displacement_error(traj, gt, h, convention)?.as_f64();
        m.collision[k] = collision_at_horizon(traj, dims, gt, h, convention)?;
        m.dacr[k] = dacr_frame(traj, dims, &gt.drivable_area, h)?.as_f64();
    }
    Ok(m)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stratum {
    Overall,
    Turn,
    Straight,
}

impl fmt::Display for Stratum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stratum::Overall => "overall",
            Stratum::Turn => "turn",
            Stratum::Straight => "straight",
        })
    }
}

/// Suite-level means. Rates are fractions in `[0, 1]`; `*_avg` is the mean
/// of the three horizon columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub stratum: Stratum,
    pub count: usize,
    pub de_1s: f64,
    pub de_2s: f64,
    pub de_3s: f64,
    pub de_avg: f64,
    pub cr_1s: f64,
    pub cr_2s: f64,
    pub cr_3s: f64,
    pub cr_avg: f64,
    pub dacr_1s: f64,
    pub dacr_2s: f64,
    pub dacr_3s: f64,
    pub dacr_avg: f64,
}

impl MetricsRow {
    pub fn de(&self) -> [f64; 3] {
        [self.de_1s, self.de_2s, self.de_3s]
    }

    pub fn cr(&self) -> [f64; 3] {
        [self.cr_1s, self.cr_2s, self.cr_3s]
    }

    pub fn dacr(&self) -> [f64; 3] {
        [self.dacr_1s, self.dacr_2s, self.dacr_3s]
    }

    fn from_rows(stratum: Stratum, rows: &[&ScenarioMetrics]) -> Self {
        let n = rows.len() as f64;
        let mean = |f: &dyn Fn(&ScenarioMetrics) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / n;
        let de = [0, 1, 2].map(|k| mean(&|r| r.de[k]));
        let cr = [0, 1, 2].map(|k| mean(&|r| if r.collision[k] { 1.0 } else { 0.0 }));
        let dacr = [0, 1, 2].map(|k| mean(&|r| r.dacr[k]));
        let avg = |v: [f64; 3]| (v[0] + v[1] + v[2]) / 3.0;
        Self {
            stratum,
            count: rows.len(),
            de_1s: de[0],
            de_2s: de[1],
            de_3s: de[2],
            de_avg: avg(de),
            cr_1s: cr[0],
            cr_2s: cr[1],
            cr_3s: cr[2],
            cr_avg: avg(cr),
            dacr_1s: dacr[0],
            dacr_2s: dacr[1],
            dacr_3s: dacr[2],
            dacr_avg: avg(dacr),
        }
    }
}

/// Means over all scenarios, followed by Turn and Straight rows when
/// `stratify` is set (a stratum without scenarios is omitted).
pub fn aggregate(rows: &[ScenarioMetrics], stratify: bool) -> Result<Vec<MetricsRow>> {
    if rows.is_empty() {
        return Err(Error::invalid("cannot aggregate zero scenarios"));
    }
    let all: Vec<&ScenarioMetrics> = rows.iter().collect();
    let mut out = vec![MetricsRow::from_rows(Stratum::Overall, &all)];
    if stratify {
        for (stratum, class) in [(Stratum::Turn, ScenarioClass::Turn), (Stratum::Straight, ScenarioClass::Straight)] {
            let sub: Vec<&ScenarioMetrics> = rows.iter().filter(|r| r.class == class).collect();
            if !sub.is_empty() {
                out.push(MetricsRow::from_rows(stratum, &sub));
            }
        }
    }
    Ok(out)
}
