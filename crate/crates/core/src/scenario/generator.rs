//! Deterministic synthetic scenarios: a two-lane corridor (straight or a
//! constant-curvature arc), a noisy vectorized map of it, multi-modal ego
//! candidates and scripted agents.
//!
//! Road frame: `s` is arc length along the right-lane center, `d` the
//! lateral offset (positive to the left). The ego starts at `s = d = 0`
//! at the world origin with heading 0.

use super::{AgentMode, AgentPrediction, Manifest, Scenario, SCHEMA_VERSION};
use crate::error::{Error, Result};
use crate::geometry::{dist_point_polyline, boxes_overlap, MultiPolygon, OrientedBox, Point2, Polygon, Polyline, Pose2};
use crate::map_model::{perturb_map, sample_laplace, MapElement, MapElementKind, PerturbMode, UncertainMap};
use crate::metrics::{classify_future, ScenarioClass};
use crate::scalar::normalize_angle;
use crate::selection::{chord_headings, CandidateSet, CandidateTrajectory, Command, EgoDims, HORIZON_STEPS, STEP_SECONDS};
use crate::uncertainty::{LaplacePoint, UncertainPolyline, B_MIN, DEFAULT_POINTS_PER_ELEMENT};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Straight,
    Turn,
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScenarioKind::Straight => "straight",
            ScenarioKind::Turn => "turn",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorParams {
    /// Laplace scale of the map vertex noise, meters.
    pub noise_scale: f64,
    /// Agents attempted per scenario (lead vehicle, oncoming vehicle,
    /// crossing pedestrian, repeating).
    pub n_agents: usize,
    /// Candidates per driving command.
    pub n_candidates: usize,
    /// Absolute road curvature for turns, 1/m.
    pub curvature_range: [f64; 2],
    pub speed_range: [f64; 2],
    pub lane_width: f64,
    pub ego_length: f64,
    pub ego_width: f64,
    /// Lateral step between concentric candidate arcs, meters.
    pub lateral_offset_range: [f64; 2],
    /// Lateral drift at the last waypoint of a curvature-varied candidate, meters.
    pub end_deviation_range: [f64; 2],
    /// Curvature of the turn-command fans when the road itself is straight, 1/m.
    pub command_curvature: f64,
    /// Paved strip between each outer lane edge and the road boundary, meters.
    pub shoulder_width: f64,
    /// Laplace scale of the planner's confidence logit error per meter of map
    /// noise.
    pub confidence_error: f64,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        Self {
            noise_scale: 0.5,
            n_agents: 3,
            n_candidates: 5,
            curvature_range: [0.03, 0.08],
            speed_range: [4.0, 9.0],
            lane_width: 3.5,
            ego_length: 4.084,
            ego_width: 1.85,
            lateral_offset_range: [1.5, 2.5],
            end_deviation_range: [2.0, 3.5],
            command_curvature: 0.08,
            shoulder_width: 1.5,
            confidence_error: 3.0,
        }
    }
}

fn check_range(name: &str, r: [f64; 2], min_exclusive: f64) -> Result<()> {
    if !(r[0].is_finite() && r[1].is_finite() && r[0] > min_exclusive && r[0] <= r[1]) {
        return Err(Error::invalid(format!("{name} must satisfy {min_exclusive} < lo <= hi, got {r:?}")));
    }
    Ok(())
}

impl GeneratorParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_scale.is_finite() && self.noise_scale >= 0.0) {
            return Err(Error::invalid(format!("noise_scale must be >= 0, got {}", self.noise_scale)));
        }
        if self.n_candidates == 0 {
            return Err(Error::invalid("n_candidates must be at least 1"));
        }
        check_range("curvature_range", self.curvature_range, 0.0)?;
        check_range("speed_range", self.speed_range, 0.0)?;
        check_range("lateral_offset_range", self.lateral_offset_range, 0.0)?;
        check_range("end_deviation_range", self.end_deviation_range, 0.0)?;
        EgoDims::new(self.ego_length, self.ego_width)?;
        if !(self.lane_width > self.ego_width) {
            return Err(Error::invalid("lane_width must exceed ego_width"));
        }
        if self.lateral_offset_range[1] > self.lane_width || self.end_deviation_range[1] > self.lane_width {
            return Err(Error::invalid("candidate offsets may not exceed one lane width"));
        }
        for (name, v) in [
            ("command_curvature", self.command_curvature),
            ("shoulder_width", self.shoulder_width),
            ("confidence_error", self.confidence_error),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        // Inner boundary of the tightest turn must keep a positive radius.
        if 1.0 / self.curvature_range[1] <= 1.5 * self.lane_width + self.shoulder_width + 1.0 {
            return Err(Error::invalid("curvature_range too tight for the corridor width"));
        }
        Ok(())
    }
}

/// Share of Turn scenarios in a suite.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurnMix {
    pub turn_fraction: f64,
}

impl TurnMix {
    pub fn new(turn_fraction: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&turn_fraction) {
            return Err(Error::invalid(format!("turn fraction {turn_fraction} outside [0, 1]")));
        }
        Ok(Self { turn_fraction })
    }

    /// Kind of the `i`-th scenario; Turn slots are spread evenly.
    pub fn kind_at(&self, i: usize) -> ScenarioKind {
        let f = self.turn_fraction;
        if ((i + 1) as f64 * f).floor() > (i as f64 * f).floor() {
            ScenarioKind::Turn
        } else {
            ScenarioKind::Straight
        }
    }
}

impl FromStr for TurnMix {
    type Err = Error;

    /// Accepts `turn-only`, `straight-only`, `T/S` percentages such as `60/40`,
    /// or a plain fraction such as `0.6`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::invalid(format!("unrecognized mix `{s}`"));
        match s {
            "turn-only" => return Self::new(1.0),
            "straight-only" => return Self::new(0.0),
            _ => {}
        }
        if let Some((t, st)) = s.split_once('/') {
            let t: f64 = t.trim().parse().map_err(|_| bad())?;
            let st: f64 = st.trim().parse().map_err(|_| bad())?;
            if !(t >= 0.0 && st >= 0.0 && t + st > 0.0) {
                return Err(bad());
            }
            return Self::new(t / (t + st));
        }
        Self::new(s.parse().map_err(|_| bad())?)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the `i`-th scenario of a suite: `splitmix64(splitmix64(master) ^ i)`.
///
/// Mixing the master first keeps suites from nearby master seeds disjoint;
/// a bare `master ^ i` would make master 1 index 45 collide with master 3
/// index 47.
pub fn scenario_seed(master_seed: u64, index: u64) -> u64 {
    splitmix64(splitmix64(master_seed) ^ index)
}

/// A constant-curvature reference path through the origin with heading 0.
#[derive(Clone, Copy, Debug)]
struct Road {
    kappa: f64,
}

impl Road {
    fn point(&self, s: f64, d: f64) -> Point2<f64> {
        if self.kappa.abs() < 1e-12 {
            return Point2::new(s, d);
        }
        let r = 1.0 / self.kappa;
        let (sin, cos) = (self.kappa * s).sin_cos();
        Point2::new((r - d) * sin, r - (r - d) * cos)
    }

    fn heading(&self, s: f64) -> f64 {
        normalize_angle(self.kappa * s)
    }

    fn pose(&self, s: f64, d: f64) -> Pose2<f64> {
        Pose2::new(self.point(s, d), self.heading(s))
    }
}

/// Arc length travelled at step `t` (0-based; step 0 is the first future waypoint).
fn step_distance(speed: f64, t: usize) -> f64 {
    speed * STEP_SECONDS * (t + 1) as f64
}

struct Layout {
    road: Road,
    speed: f64,
    lane_width: f64,
    shoulder_width: f64,
}

impl Layout {
    fn right_boundary(&self) -> f64 {
        -0.5 * self.lane_width - self.shoulder_width
    }

    fn divider(&self) -> f64 {
        0.5 * self.lane_width
    }

    fn left_boundary(&self) -> f64 {
        1.5 * self.lane_width + self.shoulder_width
    }

    fn s_range(&self) -> (f64, f64) {
        (-5.0, step_distance(self.speed, HORIZON_STEPS - 1) + 15.0)
    }

    fn samples(&self, d: f64, n: usize) -> Vec<Point2<f64>> {
        let (lo, hi) = self.s_range();
        (0..n)
            .map(|i| self.road.point(lo + (hi - lo) * i as f64 / (n - 1) as f64, d))
            .collect()
    }

    fn element(&self, kind: MapElementKind, d: f64) -> Result<MapElement<f64>> {
        let points = self
            .samples(d, DEFAULT_POINTS_PER_ELEMENT)
            .into_iter()
            .map(|p| LaplacePoint::isotropic(p, B_MIN))
            .collect::<Result<Vec<_>>>()?;
        Ok(MapElement {
            kind,
            geometry: UncertainPolyline::new(points)?,
        })
    }

    fn drivable_area(&self) -> Result<MultiPolygon<f64>> {
        let n = 4 * DEFAULT_POINTS_PER_ELEMENT;
        let mut ring = self.samples(self.right_boundary(), n);
        ring.extend(self.samples(self.left_boundary(), n).into_iter().rev());
        Ok(MultiPolygon::new(vec![Polygon::new(ring, vec![])?]))
    }

    /// Lane-center positions with headings from consecutive positions,
    /// the same convention as the candidates.
    fn ego_future(&self) -> Vec<Pose2<f64>> {
        let positions: Vec<Point2<f64>> = (0..HORIZON_STEPS)
            .map(|t| self.road.point(step_distance(self.speed, t), 0.0))
            .collect();
        let headings = chord_headings(&positions, 0.0);
        positions.into_iter().zip(headings).map(|(p, h)| Pose2::new(p, h)).collect()
    }
}

/// Lane center as seen through the noisy map: the point between matching
/// right-boundary and divider means at the nominal lane-center fraction.
pub(crate) fn perceived_center(map: &UncertainMap<f64>, params: &GeneratorParams) -> Result<Polyline<f64>> {
    let span = params.lane_width + params.shoulder_width;
    let f = (0.5 * params.lane_width + params.shoulder_width) / span;
    let right = map
        .elements
        .iter()
        .find(|e| e.kind == MapElementKind::Boundary)
        .ok_or_else(|| Error::invalid("map has no boundary"))?;
    let divider = map
        .elements
        .iter()
        .find(|e| e.kind == MapElementKind::LaneDivider)
        .ok_or_else(|| Error::invalid("map has no lane divider"))?;
    Polyline::new_dedup(
        right
            .geometry
            .points
            .iter()
            .zip(&divider.geometry.points)
            .map(|(a, b)| a.mu.add(b.mu.sub(a.mu).scale(f))),
    )
}

/// Lateral offset of `q` from a constant-curvature path through the origin
/// with heading 0, written so it stays exact as `kappa` goes to 0.
fn lateral_offset(kappa: f64, q: Point2<f64>) -> f64 {
    let a = 1.0 - kappa * q.y;
    q.y - kappa * q.x * q.x / (a + (kappa * kappa * q.x * q.x + a * a).sqrt())
}

fn offset_spread(kappa: f64, points: &[Point2<f64>]) -> (f64, f64) {
    let d: Vec<f64> = points.iter().map(|q| lateral_offset(kappa, *q)).collect();
    let mean = d.iter().sum::<f64>() / d.len() as f64;
    (d.iter().map(|x| (x - mean).powi(2)).sum(), mean)
}

/// Least-squares fit of a constant-curvature lane (curvature, lateral
/// offset) to perceived lane-center points, with |curvature| <= `kappa_max`.
pub(crate) fn fit_lane(points: &[Point2<f64>], kappa_max: f64) -> (f64, f64) {
    const HALF_GRID: i32 = 200;
    let step = kappa_max / HALF_GRID as f64;
    let mut best = (f64::INFINITY, 0.0);
    for k in -HALF_GRID..=HALF_GRID {
        let kappa = k as f64 * step;
        let (cost, _) = offset_spread(kappa, points);
        if cost < best.0 {
            best = (cost, kappa);
        }
    }
    // Golden-section refinement inside the neighbouring grid cells.
    let (mut lo, mut hi) = (best.1 - step, best.1 + step);
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..80 {
        let a = hi - phi * (hi - lo);
        let b = lo + phi * (hi - lo);
        if offset_spread(a, points).0 < offset_spread(b, points).0 {
            hi = b;
        } else {
            lo = a;
        }
    }
    let refined = 0.5 * (lo + hi);
    let kappa = if offset_spread(refined, points).0 < best.0 { refined } else { best.1 };
    (kappa, offset_spread(kappa, points).1)
}

/// Mean distance of a trajectory's waypoints to the perceived lane center.
pub fn centerline_deviation(
    traj: &CandidateTrajectory<f64>,
    map: &UncertainMap<f64>,
    params: &GeneratorParams,
) -> Result<f64> {
    let center = perceived_center(map, params)?;
    Ok(traj.waypoints.iter().map(|p| dist_point_polyline(*p, &center)).sum::<f64>() / traj.waypoints.len() as f64)
}

enum Variant {
    Offset(f64),
    Curvature(f64),
}

/// Candidate shapes for one command: center-following first, then
/// alternating left/right offsets and over/under-steer at growing levels.
fn variants(n: usize, offset: f64, end_dev: f64, speed: f64) -> Vec<Variant> {
    let s_end = step_distance(speed, HORIZON_STEPS - 1);
    let mut out = vec![Variant::Offset(0.0)];
    for k in 1..n {
        let level = ((k - 1) / 4 + 1) as f64;
        let v = match (k - 1) % 4 {
            0 => Variant::Offset(offset * level),
            1 => Variant::Offset(-offset * level),
            2 => Variant::Curvature(2.0 * end_dev * level / (s_end * s_end)),
            _ => Variant::Curvature(-2.0 * end_dev * level / (s_end * s_end)),
        };
        out.push(v);
    }
    out
}

fn fan(
    road: Road,
    base_offset: f64,
    speed: f64,
    vars: &[Variant],
    max_lateral: f64,
    map: &UncertainMap<f64>,
    params: &GeneratorParams,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<CandidateTrajectory<f64>>> {
    let shaped = vars
        .iter()
        .map(|v| {
            let waypoints = (0..HORIZON_STEPS)
                .map(|t| {
                    let s = step_distance(speed, t);
                    match *v {
                        Variant::Offset(d) => road.point(s, base_offset + d.clamp(-max_lateral, max_lateral)),
                        Variant::Curvature(dk) => Road { kappa: road.kappa + dk }.point(s, base_offset),
                    }
                })
                .collect();
            CandidateTrajectory::from_waypoints(waypoints, 0.0, 1.0)
        })
        .collect::<Result<Vec<_>>>()?;
    // Softmax of negative deviation (temperature 1 m) plus a scoring error
    // that grows with the map noise, so a noisy map can rank a bad candidate
    // first. A vanishing rank term keeps confidences strictly ordered when
    // deviations tie.
    let logits = shaped
        .iter()
        .enumerate()
        .map(|(k, c)| {
            let err = sample_laplace(rng, params.confidence_error * params.noise_scale);
            Ok(err - centerline_deviation(c, map, params)? - 1e-9 * k as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = weights.iter().sum();
    Ok(shaped
        .into_iter()
        .zip(weights)
        .map(|(c, w)| CandidateTrajectory {
            confidence: w / total,
            ..c
        })
        .collect())
}

#[derive(Clone, Copy)]
enum AgentRole {
    Lead,
    Oncoming,
    Pedestrian,
}

struct ScriptedAgent {
    prediction: AgentPrediction<f64>,
    truth: Vec<OrientedBox<f64>>,
}

/// Normalized random confidences for `n` modes.
fn mode_confidences(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..1.0)).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|r| r / total).collect()
}

fn script_agent(rng: &mut ChaCha8Rng, role: AgentRole, layout: &Layout, id: String) -> Result<ScriptedAgent> {
    let road = layout.road;
    let v = layout.speed;
    let w = layout.lane_width;
    let times: Vec<f64> = (0..HORIZON_STEPS).map(|t| STEP_SECONDS * (t + 1) as f64).collect();

    // Each mode is a function of time giving a road-frame (s, d) and a heading flip.
    let (dims, modes): (EgoDims<f64>, Vec<Vec<Pose2<f64>>>) = match role {
        AgentRole::Lead => {
            let s0 = rng.random_range(v * 1.5 + 6.0..v * 3.0 + 14.0);
            let va = rng.random_range(0.3 * v..0.9 * v);
            let keep = times.iter().map(|&t| road.pose(s0 + va * t, 0.0)).collect();
            let brake = times
                .iter()
                .map(|&t| {
                    let tt = t.min(va / 3.0);
                    road.pose(s0 + va * tt - 1.5 * tt * tt, 0.0)
                })
                .collect();
            let change = times
                .iter()
                .map(|&t| road.pose(s0 + va * t, w * (t / 3.0)))
                .collect();
            (EgoDims::new(4.5, 1.9)?, vec![keep, brake, change])
        }
        AgentRole::Oncoming => {
            let s0 = rng.random_range(v * 2.0 + 5.0..v * 3.0 + 30.0);
            let va = rng.random_range(4.0..10.0);
            let flip = |p: Pose2<f64>| Pose2::new(p.position, p.heading + std::f64::consts::PI);
            let keep = times.iter().map(|&t| flip(road.pose(s0 - va * t, w))).collect();
            let slow = times.iter().map(|&t| flip(road.pose(s0 - 0.5 * va * t, w))).collect();
            let drift = times
                .iter()
                .map(|&t| flip(road.pose(s0 - va * t, w - 0.6 * (t / 3.0))))
                .collect();
            (EgoDims::new(4.5, 1.9)?, vec![keep, slow, drift])
        }
        AgentRole::Pedestrian => {
            let s0 = rng.random_range(v * 1.0 + 4.0..v * 3.0 + 8.0);
            let d0 = layout.right_boundary() - rng.random_range(0.5..3.0);
            let vp = rng.random_range(0.8..1.8);
            let walk_heading = road.heading(s0) + std::f64::consts::FRAC_PI_2;
            let at = |d: f64| Pose2::new(road.point(s0, d), walk_heading);
            let walk = times.iter().map(|&t| at(d0 + vp * t)).collect();
            let stop = times.iter().map(|_| at(d0)).collect();
            let hurry = times.iter().map(|&t| at(d0 + 1.6 * vp * t)).collect();
            (EgoDims::new(0.6, 0.6)?, vec![walk, stop, hurry])
        }
    };

    let n_modes = rng.random_range(1..=modes.len());
    let confidences = mode_confidences(rng, n_modes);
    let pick: f64 = rng.random();
    let mut acc = 0.0;
    let mut truth_mode = n_modes - 1;
    for (k, c) in confidences.iter().enumerate() {
        acc += c;
        if pick < acc {
            truth_mode = k;
            break;
        }
    }
    let modes: Vec<AgentMode<f64>> = modes
        .into_iter()
        .take(n_modes)
        .zip(&confidences)
        .map(|(trajectory, &confidence)| AgentMode { trajectory, confidence })
        .collect();
    let truth = modes[truth_mode]
        .trajectory
        .iter()
        .map(|p| OrientedBox::from_pose(p, dims.length, dims.width))
        .collect::<Result<Vec<_>>>()?;
    Ok(ScriptedAgent {
        prediction: AgentPrediction::new(id, dims, modes)?,
        truth,
    })
}

/// True when the ground-truth ego path stays clear of every mode of the agent.
fn clear_of_ego(agent: &ScriptedAgent, ego: &[Pose2<f64>], dims: &EgoDims<f64>) -> Result<bool> {
    for mode in &agent.prediction.modes {
        for (t, pose) in mode.trajectory.iter().enumerate() {
            let a = OrientedBox::from_pose(pose, agent.prediction.dims.length, agent.prediction.dims.width)?;
            let e = OrientedBox::from_pose(&ego[t], dims.length, dims.width)?;
            if boxes_overlap(&a, &e) {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Builds one scenario. Output depends only on the arguments.
pub fn generate_scenario(kind: ScenarioKind, params: &GeneratorParams, id: &str, seed: u64) -> Result<Scenario> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = params.lane_width;

    let (speed, kappa) = match kind {
        ScenarioKind::Straight => (rng.random_range(params.speed_range[0]..=params.speed_range[1]), 0.0),
        ScenarioKind::Turn => {
            // The last chord heading is the tangent halfway between the last
            // two waypoints, so the change is |kappa| * v * 2.75 s. Keep it
            // clear of the classification threshold and below a right angle.
            let span = STEP_SECONDS * (HORIZON_STEPS as f64 - 0.5);
            let min_change = 1.2 * crate::metrics::TURN_THRESHOLD_DEG.to_radians();
            let max_change = std::f64::consts::FRAC_PI_2;
            let mut found = None;
            for _ in 0..1000 {
                let v = rng.random_range(params.speed_range[0]..=params.speed_range[1]);
                let k = rng.random_range(params.curvature_range[0]..=params.curvature_range[1]);
                let change = k * v * span;
                if change > min_change && change < max_change {
                    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    found = Some((v, sign * k));
                    break;
                }
            }
            found.ok_or_else(|| Error::invalid("speed and curvature ranges admit no turn"))?
        }
    };
    let layout = Layout {
        road: Road { kappa },
        speed,
        lane_width: w,
        shoulder_width: params.shoulder_width,
    };
    let ego_dims = EgoDims::new(params.ego_length, params.ego_width)?;
    let ego_gt_future = layout.ego_future();

    let truth_map = UncertainMap::new(
        vec![
            layout.element(MapElementKind::Boundary, layout.right_boundary())?,
            layout.element(MapElementKind::LaneDivider, layout.divider())?,
            layout.element(MapElementKind::Boundary, layout.left_boundary())?,
        ],
        layout.drivable_area()?,
    )?;
    let map = perturb_map(&truth_map, params.noise_scale, rng.random(), PerturbMode::Calibrated)?;

    let command = match kind {
        ScenarioKind::Straight => Command::GoStraight,
        ScenarioKind::Turn if kappa > 0.0 => Command::TurnLeft,
        ScenarioKind::Turn => Command::TurnRight,
    };
    let offset = rng.random_range(params.lateral_offset_range[0]..=params.lateral_offset_range[1]);
    let end_dev = rng.random_range(params.end_deviation_range[0]..=params.end_deviation_range[1]);
    let vars = variants(params.n_candidates, offset, end_dev, speed);
    // The planner only sees the noisy map: it lays its candidates around a
    // constant-curvature fit of the perceived lane center.
    let kappa_max = 1.5 * params.curvature_range[1].max(params.command_curvature);
    let (kappa_hat, offset_hat) = fit_lane(perceived_center(&map, params)?.points(), kappa_max);
    let offset_hat = offset_hat.clamp(-0.5 * w, 0.5 * w);
    let mut modes = BTreeMap::new();
    for cmd in Command::ALL {
        let cmd_kappa = if cmd == command {
            kappa_hat
        } else {
            match cmd {
                Command::TurnLeft => params.command_curvature.max(kappa_hat.abs()),
                Command::TurnRight => -params.command_curvature.max(kappa_hat.abs()),
                Command::GoStraight => 0.0,
            }
        };
        modes.insert(cmd, fan(Road { kappa: cmd_kappa }, offset_hat, speed, &vars, w, &map, params, &mut rng)?);
    }
    let candidates = CandidateSet::new(modes)?;

    let roles = [AgentRole::Lead, AgentRole::Oncoming, AgentRole::Pedestrian];
    let mut agents = Vec::new();
    let mut agent_gt = Vec::new();
    for i in 0..params.n_agents {
        let role = roles[i % roles.len()];
        for _ in 0..20 {
            let agent = script_agent(&mut rng, role, &layout, format!("agent-{i}"))?;
            if clear_of_ego(&agent, &ego_gt_future, &ego_dims)? {
                agents.push(agent.prediction);
                agent_gt.push(agent.truth);
                break;
            }
        }
    }

    let scenario_class = classify_future(&ego_gt_future);
    let expected = match kind {
        ScenarioKind::Straight => ScenarioClass::Straight,
        ScenarioKind::Turn => ScenarioClass::Turn,
    };
    debug_assert_eq!(scenario_class, expected);

    let scenario = Scenario {
        id: id.to_owned(),
        seed,
        scenario_class,
        command,
        ego_pose: Pose2::from_xyh(0.0, 0.0, 0.0),
        ego_dims,
        ego_gt_future,
        map,
        agents,
        agent_gt,
        candidates,
    };
    scenario.validate()?;
    Ok(scenario)
}

pub fn scenario_id(index: usize, kind: ScenarioKind) -> String {
    format!("s{index:05}-{kind}")
}

/// Generates a suite in memory, ordered by index.
pub fn build_suite(count: usize, mix: TurnMix, params: &GeneratorParams, master_seed: u64) -> Result<Vec<Scenario>> {
    if count == 0 {
        return Err(Error::invalid("suite count must be at least 1"));
    }
    params.validate()?;
    (0..count)
        .into_par_iter()
        .map(|i| {
            let kind = mix.kind_at(i);
            generate_scenario(kind, params, &scenario_id(i, kind), scenario_seed(master_seed, i as u64))
        })
        .collect()
}

/// Writes a suite to `out_dir` (scenario files under `scenarios/` plus
/// `manifest.json`) and returns the manifest path.
pub fn generate_suite(
    count: usize,
    mix: TurnMix,
    params: &GeneratorParams,
    master_seed: u64,
    out_dir: &Path,
) -> Result<PathBuf> {
    let scenarios = build_suite(count, mix, params, master_seed)?;
    let dir = out_dir.join("scenarios");
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let rel: Vec<PathBuf> = scenarios
        .par_iter()
        .map(|s| {
            let rel = PathBuf::from("scenarios").join(format!("{}.json", s.id));
            super::save_scenario(s, &out_dir.join(&rel))?;
            Ok(rel)
        })
        .collect::<Result<_>>()?;
    let manifest = Manifest {
        version: SCHEMA_VERSION,
        master_seed,
        generator: params.clone(),
        mix,
        scenarios: rel,
    };
    let path = out_dir.join("manifest.json");
    manifest.save(&path)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::dacr_frame;
    use crate::selection::command_filter;

    fn noiseless(n: usize) -> GeneratorParams {
        GeneratorParams {
            noise_scale: 0.0,
            n_candidates: n,
            ..GeneratorParams::default()
        }
    }

    #[test]
    fn noiseless_single_candidate_matches_ground_truth() {
        for seed in 0..20 {
            let s = generate_scenario(ScenarioKind::Straight, &noiseless(1), "x", seed).unwrap();
            let c = &command_filter(&s.candidates, s.command).unwrap()[0];
            for (t, gt) in s.ego_gt_future.iter().enumerate() {
                assert_eq!(c.waypoints[t], gt.position);
                assert_eq!(c.headings[t], gt.heading);
            }
            assert_eq!(dacr_frame(c, &s.ego_dims, &s.map.drivable_area, HORIZON_STEPS).unwrap(), 0.0);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let p = GeneratorParams::default();
        for kind in [ScenarioKind::Straight, ScenarioKind::Turn] {
            let a = generate_scenario(kind, &p, "x", 5).unwrap().to_json().unwrap();
            let b = generate_scenario(kind, &p, "x", 5).unwrap().to_json().unwrap();
            assert_eq!(a, b);
            let c = generate_scenario(kind, &p, "x", 6).unwrap().to_json().unwrap();
            assert_ne!(a, c);
        }
    }

    #[test]
    fn wide_offset_in_narrow_turn_leaves_drivable_area() {
        let p = GeneratorParams {
            lane_width: 4.0,
            ego_width: 2.0,
            lateral_offset_range: [1.2, 1.5],
            shoulder_width: 0.0,
            noise_scale: 0.0,
            ..GeneratorParams::default()
        };
        for seed in 0..10 {
            let s = generate_scenario(ScenarioKind::Turn, &p, "x", seed).unwrap();
            let any = command_filter(&s.candidates, s.command)
                .unwrap()
                .iter()
                .skip(1)
                .any(|c| dacr_frame(c, &s.ego_dims, &s.map.drivable_area, HORIZON_STEPS).unwrap() > 0.0);
            assert!(any, "seed {seed}");
        }
    }

    #[test]
    fn classes_follow_kind_and_candidates_stay_near_road() {
        let p = GeneratorParams::default();
        for seed in 0..30 {
            for kind in [ScenarioKind::Straight, ScenarioKind::Turn] {
                let s = generate_scenario(kind, &p, "x", seed).unwrap();
                let want = if kind == ScenarioKind::Turn { ScenarioClass::Turn } else { ScenarioClass::Straight };
                assert_eq!(s.scenario_class, want);
                let road = Road {
                    kappa: if kind == ScenarioKind::Turn {
                        // A point on an arc from the origin at heading 0 satisfies
                        // x^2 + y^2 = 2 y / kappa.
                        let p = s.ego_gt_future[HORIZON_STEPS - 1].position;
                        2.0 * p.y / (p.x * p.x + p.y * p.y)
                    } else {
                        0.0
                    },
                };
                let center = Polyline::new((0..200).map(|i| road.point(-5.0 + i as f64 * 0.5, 0.0)).collect()).unwrap();
                for c in command_filter(&s.candidates, s.command).unwrap() {
                    for wp in &c.waypoints {
                        assert!(dist_point_polyline(*wp, &center) <= 2.0 * 2.0 * p.lane_width);
                    }
                }
            }
        }
    }

    #[test]
    fn confidences_positive_and_ordered_by_deviation() {
        let p = GeneratorParams {
            confidence_error: 0.0,
            ..GeneratorParams::default()
        };
        for seed in 0..20 {
            let s = generate_scenario(ScenarioKind::Turn, &p, "x", seed).unwrap();
            for cands in s.candidates.modes().values() {
                let mut ranked: Vec<(f64, f64)> = cands
                    .iter()
                    .map(|c| (centerline_deviation(c, &s.map, &p).unwrap(), c.confidence))
                    .collect();
                ranked.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
                assert!(ranked.iter().all(|r| r.1 > 0.0));
                assert!(ranked.windows(2).all(|w| w[0].1 > w[1].1), "{ranked:?}");
            }
        }
    }

    #[test]
    fn suite_ids_and_mix() {
        let mix: TurnMix = "60/40".parse().unwrap();
        let turns = (0..200).filter(|&i| mix.kind_at(i) == ScenarioKind::Turn).count();
        assert_eq!(turns, 120);
        assert_eq!("turn-only".parse::<TurnMix>().unwrap().kind_at(3), ScenarioKind::Turn);
        assert!("abc".parse::<TurnMix>().is_err());
        let p = GeneratorParams {
            n_agents: 1,
            ..GeneratorParams::default()
        };
        let a: Vec<String> = build_suite(8, mix, &p, 11).unwrap().into_iter().map(|s| s.id).collect();
        let b: Vec<String> = build_suite(8, mix, &p, 11).unwrap().into_iter().map(|s| s.id).collect();
        assert_eq!(a, b);
        assert!(build_suite(0, mix, &p, 11).is_err());
    }

    #[test]
    fn scenario_seeds_differ() {
        let seeds: std::collections::BTreeSet<u64> = (0..1000).map(|i| scenario_seed(42, i)).collect();
        assert_eq!(seeds.len(), 1000);
    }

    #[test]
    fn ground_truth_ego_avoids_all_agent_modes() {
        let p = GeneratorParams::default();
        for seed in 0..20 {
            let s = generate_scenario(ScenarioKind::Straight, &p, "x", seed).unwrap();
            for (a, gt) in s.agents.iter().zip(&s.agent_gt) {
                for (t, b) in gt.iter().enumerate() {
                    let e = OrientedBox::from_pose(&s.ego_gt_future[t], s.ego_dims.length, s.ego_dims.width).unwrap();
                    assert!(!boxes_overlap(&e, b), "{}", a.id);
                }
            }
        }
    }
}
