//! Scenario data model and the version 1 scenario / manifest file formats.
//!
//! A scenario file is a JSON object `{"version": 1, "scenario": {...}}`.
//! Floating point values are written in shortest round-trip form, so
//! loading a saved scenario reproduces every field bit for bit.

mod generator;

pub use generator::{
    build_suite, centerline_deviation, generate_scenario, generate_suite, scenario_id, scenario_seed, GeneratorParams,
    ScenarioKind, TurnMix,
};

use crate::error::{Error, Result};
use crate::geometry::{OrientedBox, Pose2};
use crate::map_model::{UncertainMap, MAX_MAP_ELEMENTS};
use crate::metrics::{classify_future, GroundTruth, ScenarioClass};
use crate::scalar::{normalize_angle, Scalar};
use crate::selection::{CandidateSet, Command, EgoDims, HORIZON_STEPS};
use crate::uncertainty::B_MIN;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Schema version written to and required in scenario and manifest files.
pub const SCHEMA_VERSION: u64 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentMode<T> {
    pub trajectory: Vec<Pose2<T>>,
    pub confidence: T,
}

/// Multi-modal prediction for one traffic participant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentPrediction<T> {
    pub id: String,
    pub dims: EgoDims<T>,
    pub modes: Vec<AgentMode<T>>,
}

impl<T: Scalar> AgentPrediction<T> {
    pub fn new(id: String, dims: EgoDims<T>, modes: Vec<AgentMode<T>>) -> Result<Self> {
        let agent = Self { id, dims, modes };
        agent.check().map_err(|(field, msg)| Error::invalid(format!("{field}: {msg}")))?;
        Ok(agent)
    }

    /// Returns `(field, message)` for the first violated invariant.
    fn check(&self) -> std::result::Result<(), (String, String)> {
        if !(self.dims.length > T::zero() && self.dims.width > T::zero()) {
            return Err(("dims".into(), "dimensions must be positive".into()));
        }
        if self.modes.is_empty() {
            return Err(("modes".into(), "at least one mode required".into()));
        }
        let mut total = T::zero();
        for (i, m) in self.modes.iter().enumerate() {
            if !(m.confidence >= T::zero() && m.confidence <= T::one()) {
                return Err((format!("modes[{i}].confidence"), format!("{} outside [0, 1]", m.confidence)));
            }
            if m.trajectory.iter().any(|p| !p.position.is_finite() || !p.heading.is_finite()) {
                return Err((format!("modes[{i}].trajectory"), "non-finite pose".into()));
            }
            total = total + m.confidence;
        }
        if total > T::one() + T::lit(1e-6) {
            return Err(("modes".into(), format!("confidences sum to {total} > 1")));
        }
        Ok(())
    }

    /// The highest-confidence mode; the earliest wins ties.
    pub fn top_mode(&self) -> Result<&AgentMode<T>> {
        self.modes
            .iter()
            .reduce(|best, m| if m.confidence > best.confidence { m } else { best })
            .ok_or_else(|| Error::invalid(format!("agent {} has no modes", self.id)))
    }
}

/// One evaluation unit: the perceived world, the planner's candidates and
/// the ground truth they are scored against.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub id: String,
    pub seed: u64,
    pub scenario_class: ScenarioClass,
    pub command: Command,
    pub ego_pose: Pose2<f64>,
    pub ego_dims: EgoDims<f64>,
    pub ego_gt_future: Vec<Pose2<f64>>,
    pub map: UncertainMap<f64>,
    pub agents: Vec<AgentPrediction<f64>>,
    /// Ground-truth boxes, one sequence per entry of `agents`.
    pub agent_gt: Vec<Vec<OrientedBox<f64>>>,
    pub candidates: CandidateSet<f64>,
}

fn violation(field: impl Into<String>, message: impl Into<String>) -> Error {
    Error::invariant(field, message)
}

fn check_pose(field: &str, pose: &Pose2<f64>) -> Result<()> {
    if !pose.position.is_finite() || !pose.heading.is_finite() {
        return Err(violation(field, "non-finite pose"));
    }
    if normalize_angle(pose.heading) != pose.heading {
        return Err(violation(field, format!("heading {} outside (-pi, pi]", pose.heading)));
    }
    Ok(())
}

impl Scenario {
    pub fn ground_truth(&self) -> GroundTruth<f64> {
        GroundTruth {
            ego_future: self.ego_gt_future.clone(),
            agent_futures: self.agent_gt.clone(),
            drivable_area: self.map.drivable_area.clone(),
        }
    }

    /// Checks every invariant; errors name the offending field.
    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(violation("id", "must not be empty"));
        }
        check_pose("ego_pose", &self.ego_pose)?;
        if !(self.ego_dims.length > 0.0 && self.ego_dims.width > 0.0) {
            return Err(violation("ego_dims", "dimensions must be positive"));
        }
        if self.ego_gt_future.len() != HORIZON_STEPS {
            return Err(violation(
                "ego_gt_future",
                format!("expected {HORIZON_STEPS} poses, got {}", self.ego_gt_future.len()),
            ));
        }
        for (t, pose) in self.ego_gt_future.iter().enumerate() {
            check_pose(&format!("ego_gt_future[{t}]"), pose)?;
        }
        let class = classify_future(&self.ego_gt_future);
        if class != self.scenario_class {
            return Err(violation(
                "scenario_class",
                format!("{:?} disagrees with the ground-truth heading change ({class:?})", self.scenario_class),
            ));
        }

        if self.map.elements.len() > MAX_MAP_ELEMENTS {
            return Err(violation("map.elements", format!("more than {MAX_MAP_ELEMENTS} elements")));
        }
        for (i, el) in self.map.elements.iter().enumerate() {
            if el.geometry.points.len() < 2 {
                return Err(violation(format!("map.elements[{i}].geometry.points"), "needs at least 2 points"));
            }
            for (j, lp) in el.geometry.points.iter().enumerate() {
                let field = format!("map.elements[{i}].geometry.points[{j}]");
                if !lp.mu.is_finite() {
                    return Err(violation(format!("{field}.mu"), "non-finite location"));
                }
                if lp.b.iter().any(|b| !(b.is_finite() && *b >= B_MIN)) {
                    return Err(violation(
                        format!("{field}.b"),
                        format!("scales {:?} must be finite and >= {B_MIN}", lp.b),
                    ));
                }
            }
        }
        for (i, poly) in self.map.drivable_area.polygons().iter().enumerate() {
            poly.validate()
                .map_err(|e| violation(format!("map.drivable_area.polygons[{i}]"), e.to_string()))?;
        }

        if self.agent_gt.len() != self.agents.len() {
            return Err(violation(
                "agent_gt",
                format!("{} sequences for {} agents", self.agent_gt.len(), self.agents.len()),
            ));
        }
        for (i, agent) in self.agents.iter().enumerate() {
            agent
                .check()
                .map_err(|(field, msg)| violation(format!("agents[{i}].{field}"), msg))?;
            for (k, mode) in agent.modes.iter().enumerate() {
                if mode.trajectory.len() != HORIZON_STEPS {
                    return Err(violation(
                        format!("agents[{i}].modes[{k}].trajectory"),
                        format!("expected {HORIZON_STEPS} poses, got {}", mode.trajectory.len()),
                    ));
                }
            }
        }
        for (i, boxes) in self.agent_gt.iter().enumerate() {
            if boxes.len() != HORIZON_STEPS {
                return Err(violation(format!("agent_gt[{i}]"), format!("expected {HORIZON_STEPS} boxes")));
            }
            for (t, b) in boxes.iter().enumerate() {
                OrientedBox::new(b.center, b.heading, b.length, b.width)
                    .map_err(|e| violation(format!("agent_gt[{i}][{t}]"), e.to_string()))?;
            }
        }
        self.candidates.check().map_err(|e| violation("candidates", e.to_string()))?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ScenarioFileRef {
            version: SCHEMA_VERSION,
            scenario: self,
        };
        let mut text = serde_json::to_string_pretty(&file).map_err(|e| Error::invalid(e.to_string()))?;
        text.push('\n');
        Ok(text)
    }

    /// Parses and validates scenario text. `origin` only labels errors.
    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        check_version(text, origin)?;
        let de = &mut serde_json::Deserializer::from_str(text);
        let file: ScenarioFile = serde_path_to_error::deserialize(de).map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            message: format!("field `{}`: {}", e.path(), e.inner()),
        })?;
        file.scenario.validate()?;
        Ok(file.scenario)
    }
}

#[derive(Serialize)]
struct ScenarioFileRef<'a> {
    version: u64,
    scenario: &'a Scenario,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    #[allow(dead_code)]
    version: u64,
    scenario: Scenario,
}

fn check_version(text: &str, origin: &Path) -> Result<()> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Parse {
        path: origin.to_path_buf(),
        message: e.to_string(),
    })?;
    match value.get("version") {
        None => Err(Error::Version {
            path: origin.to_path_buf(),
            found: "missing `version` field".into(),
        }),
        Some(v) if v.as_u64() == Some(SCHEMA_VERSION) => Ok(()),
        Some(v) => Err(Error::Version {
            path: origin.to_path_buf(),
            found: format!("version {v}, expected {SCHEMA_VERSION}"),
        }),
    }
}

pub fn save_scenario(scenario: &Scenario, path: &Path) -> Result<()> {
    std::fs::write(path, scenario.to_json()?).map_err(|e| Error::io(path, e))
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Scenario::from_json(&text, path)
}

/// A suite: the master seed, generator settings and scenario file paths
/// (relative to the manifest's directory).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u64,
    pub master_seed: u64,
    pub generator: GeneratorParams,
    pub mix: TurnMix,
    pub scenarios: Vec<PathBuf>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        check_version(&text, path)?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        serde_path_to_error::deserialize(de).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: format!("field `{}`: {}", e.path(), e.inner()),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).map_err(|e| Error::invalid(e.to_string()))?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Loads every listed scenario, resolving paths against `manifest_dir`.
    pub fn load_scenarios(&self, manifest_dir: &Path) -> Result<Vec<Scenario>> {
        self.scenarios
            .iter()
            .map(|p| load_scenario(&manifest_dir.join(p)))
            .collect()
    }
}
