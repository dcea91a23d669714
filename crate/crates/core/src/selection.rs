//! Uncertainty- and collision-aware selection among multi-modal candidates.
//!
//! For the active driving command every candidate starts with its confidence
//! as score. The score is set to zero when any enabled filter fires:
//!
//! * uncertainty: the trajectory's aggregated Laplace NLL against the map's
//!   boundary vertices falls below `nll_threshold`,
//! * agents: the ego footprint overlaps a predicted agent footprint at the
//!   same timestep,
//! * boundaries: a footprint corner comes closer than `boundary_clearance`
//!   to a boundary's mean polyline.
//!
//! The highest remaining score wins. If every score is zero a fallback picks
//! the candidate farthest (in NLL) from uncertain boundaries among those that
//! do not hit an agent.

use crate::error::{Error, Result};
use crate::geometry::{boxes_overlap, dist_point_polyline, OrientedBox, Point2, Polyline, Pose2};
use crate::map_model::{RiskElements, UncertainMap};
use crate::scalar::Scalar;
use crate::scenario::AgentPrediction;
use crate::uncertainty::{min_nll_to_elements, UncertainPolyline};
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::BTreeMap;

/// Waypoints per trajectory (3 s at 2 Hz).
pub const HORIZON_STEPS: usize = 6;

/// Seconds between consecutive waypoints.
pub const STEP_SECONDS: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    TurnLeft,
    TurnRight,
    GoStraight,
}

impl Command {
    pub const ALL: [Command; 3] = [Command::TurnLeft, Command::TurnRight, Command::GoStraight];
}

/// Footprint size of a vehicle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EgoDims<T> {
    pub length: T,
    pub width: T,
}

impl<T: Scalar> EgoDims<T> {
    pub fn new(length: T, width: T) -> Result<Self> {
        if !(length > T::zero() && width > T::zero() && length.is_finite() && width.is_finite()) {
            return Err(Error::invalid(format!("dimensions must be positive, got {length} x {width}")));
        }
        Ok(Self { length, width })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateTrajectory<T> {
    pub waypoints: Vec<Point2<T>>,
    pub headings: Vec<T>,
    pub confidence: T,
}

impl<T: Scalar> CandidateTrajectory<T> {
    pub fn new(waypoints: Vec<Point2<T>>, headings: Vec<T>, confidence: T) -> Result<Self> {
        let traj = Self {
            waypoints,
            headings,
            confidence,
        };
        traj.check()?;
        Ok(traj)
    }

    /// Derives headings from consecutive waypoints; the first waypoint takes
    /// `initial_heading`, and a waypoint that does not move keeps the
    /// previous heading.
    pub fn from_waypoints(waypoints: Vec<Point2<T>>, initial_heading: T, confidence: T) -> Result<Self> {
        let headings = chord_headings(&waypoints, initial_heading);
        Self::new(waypoints, headings, confidence)
    }

    pub(crate) fn check(&self) -> Result<()> {
        if self.waypoints.len() != HORIZON_STEPS || self.headings.len() != HORIZON_STEPS {
            return Err(Error::invalid(format!(
                "trajectory must have {HORIZON_STEPS} waypoints and headings, got {} and {}",
                self.waypoints.len(),
                self.headings.len()
            )));
        }
        if !self.confidence.is_finite() || self.confidence < T::zero() || self.confidence > T::one() {
            return Err(Error::invalid(format!("confidence {} outside [0, 1]", self.confidence)));
        }
        if self.waypoints.iter().any(|p| !p.is_finite()) || self.headings.iter().any(|h| !h.is_finite()) {
            return Err(Error::invalid("non-finite waypoint or heading"));
        }
        Ok(())
    }

    pub fn pose(&self, t: usize) -> Pose2<T> {
        Pose2::new(self.waypoints[t], self.headings[t])
    }

    pub fn footprint(&self, t: usize, dims: &EgoDims<T>) -> OrientedBox<T> {
        OrientedBox {
            center: self.waypoints[t],
            heading: self.headings[t],
            length: dims.length,
            width: dims.width,
        }
    }
}

pub fn chord_headings<T: Scalar>(waypoints: &[Point2<T>], initial_heading: T) -> Vec<T> {
    let mut headings = Vec::with_capacity(waypoints.len());
    let mut prev = initial_heading;
    for (t, p) in waypoints.iter().enumerate() {
        if t > 0 {
            let d = p.sub(waypoints[t - 1]);
            if d.norm() > T::lit(1e-9) {
                prev = d.y.atan2(d.x);
            }
        }
        headings.push(prev);
    }
    headings
}

/// Candidates grouped by driving command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CandidateSet<T> {
    modes: BTreeMap<Command, Vec<CandidateTrajectory<T>>>,
}

impl<T: Scalar> CandidateSet<T> {
    pub fn new(modes: BTreeMap<Command, Vec<CandidateTrajectory<T>>>) -> Result<Self> {
        let set = Self { modes };
        set.check()?;
        Ok(set)
    }

    pub(crate) fn check(&self) -> Result<()> {
        for cmd in Command::ALL {
            match self.modes.get(&cmd) {
                None => return Err(Error::invalid(format!("candidate set lacks command {cmd:?}"))),
                Some(v) if v.is_empty() => {
                    return Err(Error::invalid(format!("command {cmd:?} has no candidates")))
                }
                Some(v) => v.iter().try_for_each(|c| c.check())?,
            }
        }
        Ok(())
    }

    pub fn modes(&self) -> &BTreeMap<Command, Vec<CandidateTrajectory<T>>> {
        &self.modes
    }

    /// Keeps only the first `n` candidates of every command.
    pub fn truncated(&self, n: usize) -> Result<Self> {
        Self::new(
            self.modes
                .iter()
                .map(|(k, v)| (*k, v.iter().take(n).cloned().collect()))
                .collect(),
        )
    }

    pub fn map_confidences(&self, f: impl Fn(T) -> T) -> Self {
        let modes = self
            .modes
            .iter()
            .map(|(k, v)| {
                let v = v
                    .iter()
                    .map(|c| CandidateTrajectory {
                        confidence: f(c.confidence),
                        ..c.clone()
                    })
                    .collect();
                (*k, v)
            })
            .collect();
        Self { modes }
    }
}

/// The candidates generated for `command`.
pub fn command_filter<T: Scalar>(set: &CandidateSet<T>, command: Command) -> Result<&[CandidateTrajectory<T>]> {
    set.modes
        .get(&command)
        .map(Vec::as_slice)
        .ok_or_else(|| Error::invalid(format!("no candidates for command {command:?}")))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskAggregator {
    #[default]
    Min,
    Mean,
}

/// Which predicted agent modes the agent filter checks.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentModes {
    #[default]
    TopMode,
    AllModes,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    pub nll_threshold: f64,
    pub boundary_clearance: f64,
    pub agent_margin: f64,
    pub risk_aggregator: RiskAggregator,
    pub enable_uncertainty_filter: bool,
    pub enable_agent_filter: bool,
    pub enable_boundary_filter: bool,
    pub agent_modes: AgentModes,
    pub risk_elements: RiskElements,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            nll_threshold: 2.0,
            boundary_clearance: 0.3,
            agent_margin: 0.0,
            risk_aggregator: RiskAggregator::Min,
            enable_uncertainty_filter: true,
            enable_agent_filter: true,
            enable_boundary_filter: true,
            agent_modes: AgentModes::TopMode,
            risk_elements: RiskElements::BoundariesOnly,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.nll_threshold.is_finite() {
            return Err(Error::invalid("nll_threshold must be finite"));
        }
        if !(self.boundary_clearance >= 0.0 && self.boundary_clearance.is_finite()) {
            return Err(Error::invalid("boundary_clearance must be finite and >= 0"));
        }
        if !(self.agent_margin >= 0.0 && self.agent_margin.is_finite()) {
            return Err(Error::invalid("agent_margin must be finite and >= 0"));
        }
        Ok(())
    }

    pub fn with_filters(mut self, uncertainty: bool, agents: bool, boundaries: bool) -> Self {
        self.enable_uncertainty_filter = uncertainty;
        self.enable_agent_filter = agents;
        self.enable_boundary_filter = boundaries;
        self
    }
}

/// Per-candidate evaluation details.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord<T> {
    pub confidence: T,
    /// Aggregated NLL against the risk elements; `+inf` when the map has none.
    pub risk_nll: T,
    pub uncertainty_flag: bool,
    pub agent_collision: bool,
    pub boundary_collision: bool,
    pub final_score: T,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport<T> {
    pub chosen_index: usize,
    pub chosen: CandidateTrajectory<T>,
    pub records: Vec<CandidateRecord<T>>,
    pub fallback_used: bool,
}

/// Aggregates per-waypoint minimum NLL against the given elements.
pub fn trajectory_risk<T: Scalar, E: AsRef<UncertainPolyline<T>>>(
    traj: &CandidateTrajectory<T>,
    elements: &[E],
    aggregator: RiskAggregator,
) -> Result<T> {
    if elements.is_empty() {
        return Err(Error::invalid("risk needs at least one map element"));
    }
    let per_point = traj
        .waypoints
        .iter()
        .map(|p| min_nll_to_elements(*p, elements))
        .collect::<Result<Vec<T>>>()?;
    Ok(match aggregator {
        RiskAggregator::Min => per_point.iter().copied().fold(T::infinity(), T::min),
        RiskAggregator::Mean => {
            per_point.iter().copied().sum::<T>() / T::from_usize(per_point.len()).expect("small count")
        }
    })
}

/// True when the ego footprint overlaps a predicted agent footprint at the
/// same timestep. Agent boxes are grown by `margin` on every side.
pub fn agent_collision_check<T: Scalar>(
    traj: &CandidateTrajectory<T>,
    ego_dims: &EgoDims<T>,
    agents: &[AgentPrediction<T>],
    margin: T,
    modes: AgentModes,
) -> Result<bool> {
    let steps = traj.waypoints.len();
    for agent in agents {
        let checked: Vec<_> = match modes {
            AgentModes::TopMode => vec![agent.top_mode()?],
            AgentModes::AllModes => agent.modes.iter().collect(),
        };
        for mode in checked {
            if mode.trajectory.len() != steps {
                return Err(Error::invalid(format!(
                    "agent {} predicts {} steps but the trajectory has {steps}",
                    agent.id,
                    mode.trajectory.len()
                )));
            }
            for (t, pose) in mode.trajectory.iter().enumerate() {
                let other = OrientedBox::from_pose(pose, agent.dims.length, agent.dims.width)?.inflated(margin)?;
                if boxes_overlap(&traj.footprint(t, ego_dims), &other) {
                    return Ok(true);
                }
            }
        }
    }
    Ok(false)
}

/// True when any footprint corner at any timestep is strictly closer than
/// `clearance` to any boundary polyline.
pub fn boundary_collision_check<T: Scalar>(
    traj: &CandidateTrajectory<T>,
    ego_dims: &EgoDims<T>,
    boundaries: &[Polyline<T>],
    clearance: T,
) -> Result<bool> {
    if boundaries.is_empty() {
        return Err(Error::invalid("boundary check needs at least one boundary"));
    }
    for t in 0..traj.waypoints.len() {
        for corner in traj.footprint(t, ego_dims).corners() {
            if boundaries.iter().any(|b| dist_point_polyline(corner, b) < clearance) {
                return Ok(true);
            }
        }
    }
    Ok(false)
}

/// Scores every candidate of `command` and picks one.
pub fn ucas_select<T: Scalar>(
    set: &CandidateSet<T>,
    command: Command,
    map: &UncertainMap<T>,
    agents: &[AgentPrediction<T>],
    ego_dims: &EgoDims<T>,
    cfg: &SelectionConfig,
) -> Result<SelectionReport<T>> {
    cfg.validate()?;
    let candidates = command_filter(set, command)?;
    let records = evaluate_candidates(candidates, map, agents, ego_dims, cfg)?;
    let (chosen_index, fallback_used) = choose(&records, cfg);
    Ok(SelectionReport {
        chosen_index,
        chosen: candidates[chosen_index].clone(),
        records,
        fallback_used,
    })
}

/// Computes risk, collision flags and final score for each candidate.
pub fn evaluate_candidates<T: Scalar>(
    candidates: &[CandidateTrajectory<T>],
    map: &UncertainMap<T>,
    agents: &[AgentPrediction<T>],
    ego_dims: &EgoDims<T>,
    cfg: &SelectionConfig,
) -> Result<Vec<CandidateRecord<T>>> {
    let risk_elements = map.elements_for(cfg.risk_elements);
    if cfg.enable_uncertainty_filter && risk_elements.is_empty() {
        return Err(Error::invalid("uncertainty filter enabled but the map has no risk elements"));
    }
    let boundary_lines = map.mean_polylines(RiskElements::BoundariesOnly)?;
    if cfg.enable_boundary_filter && boundary_lines.is_empty() {
        return Err(Error::invalid("boundary filter enabled but the map has no boundaries"));
    }
    let threshold = T::lit(cfg.nll_threshold);
    let clearance = T::lit(cfg.boundary_clearance);
    let margin = T::lit(cfg.agent_margin);

    candidates
        .iter()
        .map(|traj| {
            let risk_nll = if risk_elements.is_empty() {
                T::infinity()
            } else {
                trajectory_risk(traj, &risk_elements, cfg.risk_aggregator)?
            };
            let agent_collision = agent_collision_check(traj, ego_dims, agents, margin, cfg.agent_modes)?;
            let boundary_collision = !boundary_lines.is_empty()
                && boundary_collision_check(traj, ego_dims, &boundary_lines, clearance)?;
            let uncertainty_flag = risk_nll < threshold;
            let zeroed = (cfg.enable_uncertainty_filter && uncertainty_flag)
                || (cfg.enable_agent_filter && agent_collision)
                || (cfg.enable_boundary_filter && boundary_collision);
            Ok(CandidateRecord {
                confidence: traj.confidence,
                risk_nll,
                uncertainty_flag,
                agent_collision,
                boundary_collision,
                final_score: if zeroed { T::zero() } else { traj.confidence },
            })
        })
        .collect()
}

fn desc<T: PartialOrd>(a: T, b: T) -> Ordering {
    b.partial_cmp(&a).unwrap_or(Ordering::Equal)
}

/// Picks an index from evaluated records; returns `(index, fallback_used)`.
///
/// Ties on score go to the lower-risk (higher NLL) candidate when the
/// uncertainty filter is on, then to the lowest index.
pub fn choose<T: Scalar>(records: &[CandidateRecord<T>], cfg: &SelectionConfig) -> (usize, bool) {
    assert!(!records.is_empty(), "choose needs at least one record");
    let best_by = |pool: &mut dyn Iterator<Item = usize>, cmp: &dyn Fn(usize, usize) -> Ordering| {
        pool.min_by(|&a, &b| cmp(a, b).then(a.cmp(&b)))
    };

    if records.iter().any(|r| r.final_score > T::zero()) {
        let i = best_by(&mut (0..records.len()), &|a, b| {
            let by_score = desc(records[a].final_score, records[b].final_score);
            if cfg.enable_uncertainty_filter {
                by_score.then(desc(records[a].risk_nll, records[b].risk_nll))
            } else {
                by_score
            }
        });
        return (i.expect("non-empty"), false);
    }

    let safe = |i: &usize| !(cfg.enable_agent_filter && records[*i].agent_collision);
    let mut pool = (0..records.len()).filter(safe).peekable();
    let i = if pool.peek().is_some() {
        best_by(&mut pool, &|a, b| {
            desc(records[a].risk_nll, records[b].risk_nll).then(desc(records[a].confidence, records[b].confidence))
        })
    } else {
        best_by(&mut (0..records.len()), &|a, b| desc(records[a].confidence, records[b].confidence))
    };
    (i.expect("non-empty"), true)
}
