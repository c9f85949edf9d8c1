//! Scenario files: schema, defaults, validation and the normalized dump.

use std::path::{Path, PathBuf};

use intentctl_core::controller::StiffnessGains;
use intentctl_core::dynamics::{ModelError, RobotModel, RobotParams};
use intentctl_core::intent::FactorParams;
use intentctl_core::sim::{HumanEvent, NeckParams, SensorNoise, SimConfig, SimError, TrajectoryParams, WorldParams};
use intentctl_core::supervisor::{SupervisorParams, Thresholds};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;

/// Robot reference that selects the parameter file shipped with the crate.
pub const BUNDLED_ROBOT: &str = "bundled:panda_like";

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parsing scenario: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported schema {found}, expected {SCHEMA_VERSION}")]
    Schema { found: u32 },
    #[error("event {index} ({kind}): {message}")]
    Event {
        index: usize,
        kind: &'static str,
        message: String,
    },
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("robot file {path}: {source}")]
    Robot { path: String, source: ModelError },
}

fn default_robot() -> String {
    BUNDLED_ROBOT.into()
}
fn default_dt() -> f64 {
    0.001
}
fn default_factor_rate() -> f64 {
    10.0
}

/// Everything needed to reproduce one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema: u32,
    #[serde(default)]
    pub name: String,
    /// `bundled:panda_like` or a path relative to the scenario file.
    #[serde(default = "default_robot")]
    pub robot: String,
    /// Starting joint angles; the robot file's home pose when absent.
    #[serde(default)]
    pub initial_q: Option<Vec<f64>>,
    #[serde(default = "default_dt")]
    pub dt: f64,
    pub duration: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub neck: NeckParams,
    /// Scanning path; without it the arm only ever waits or is guided.
    #[serde(default)]
    pub trajectory: Option<TrajectoryParams>,
    #[serde(default)]
    pub factors: FactorParams,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default)]
    pub gains: StiffnessGains,
    #[serde(default)]
    pub supervisor: SupervisorParams,
    #[serde(default)]
    pub world: WorldParams,
    #[serde(default)]
    pub noise: SensorNoise,
    #[serde(default)]
    pub compensate_external: bool,
    /// Largest change of any weighting factor per second.
    #[serde(default = "default_factor_rate")]
    pub factor_rate: f64,
    #[serde(default)]
    pub events: Vec<HumanEvent>,
}

impl Scenario {
    /// A scenario with every default and no events.
    pub fn new(duration: f64) -> Self {
        Self {
            schema: SCHEMA_VERSION,
            name: String::new(),
            robot: default_robot(),
            initial_q: None,
            dt: default_dt(),
            duration,
            seed: 0,
            neck: NeckParams::default(),
            trajectory: Some(TrajectoryParams::default()),
            factors: FactorParams::default(),
            thresholds: Thresholds::default(),
            gains: StiffnessGains::default(),
            supervisor: SupervisorParams::default(),
            world: WorldParams::default(),
            noise: SensorNoise::default(),
            compensate_external: false,
            factor_rate: default_factor_rate(),
            events: vec![],
        }
    }

    /// Parses, validates and normalizes (events ordered by start time).
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let mut s: Scenario = serde_json::from_str(text)?;
        s.validate()?;
        s.events.sort_by(|a, b| a.start().total_cmp(&b.start()));
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Canonical pretty JSON with every default written out.
    pub fn normalized(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("scenario serializes");
        s.push('\n');
        s
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: &str| Err(ScenarioError::Invariant(m.into()));
        if self.schema != SCHEMA_VERSION {
            return Err(ScenarioError::Schema { found: self.schema });
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return bad("duration > 0");
        }
        if !(self.dt > 0.0 && self.dt <= intentctl_core::dynamics::MAX_STEP) {
            return bad("dt in (0, 0.005]");
        }
        if !(self.factor_rate > 0.0) {
            return bad("factor_rate > 0");
        }
        for (index, e) in self.events.iter().enumerate() {
            if let Some(message) = e.violation(intentctl_core::dynamics::ARM_DOF) {
                return Err(ScenarioError::Event {
                    index,
                    kind: e.kind(),
                    message,
                });
            }
        }
        let last_end = self.events.iter().map(|e| e.end()).fold(0.0, f64::max);
        if self.duration < last_end {
            return Err(ScenarioError::Invariant(format!(
                "duration {} must cover the last event end {last_end}",
                self.duration
            )));
        }
        for (what, v) in [
            ("neck", self.neck.violation()),
            ("factors", self.factors.violation()),
            ("trajectory", self.trajectory.as_ref().and_then(|t| t.violation())),
        ] {
            if let Some(v) = v {
                return Err(ScenarioError::Invariant(format!("{what}: {v}")));
            }
        }
        self.thresholds
            .validate()
            .map_err(|e| ScenarioError::Invariant(format!("thresholds: {e}")))?;
        Ok(())
    }

    pub fn robot_params(&self, base_dir: &Path) -> Result<RobotParams, ScenarioError> {
        if self.robot == BUNDLED_ROBOT {
            return Ok(RobotParams::panda_like());
        }
        let path = base_dir.join(&self.robot);
        RobotParams::load(&path).map_err(|source| ScenarioError::Robot {
            path: path.display().to_string(),
            source,
        })
    }

    /// Simulation configuration; relative robot paths resolve against `base_dir`.
    pub fn sim_config(&self, base_dir: &Path) -> Result<SimConfig, ScenarioError> {
        let robot = |source| ScenarioError::Robot {
            path: self.robot.clone(),
            source,
        };
        let model = RobotModel::arm_from_params(&self.robot_params(base_dir)?).map_err(robot)?;
        let initial_q = match &self.initial_q {
            Some(q) => DVector::from_column_slice(q),
            None => model.home.clone(),
        };
        let config = SimConfig {
            model,
            initial_q,
            dt: self.dt,
            duration: self.duration,
            neck: self.neck,
            trajectory: self.trajectory,
            factors: self.factors,
            thresholds: self.thresholds,
            gains: self.gains,
            supervisor: self.supervisor,
            world: self.world,
            noise: self.noise,
            seed: self.seed,
            compensate_external: self.compensate_external,
            factor_rate: self.factor_rate,
            events: self.events.clone(),
        };
        config.validate().map_err(|e| match e {
            SimError::Config(m) => ScenarioError::Invariant(m),
            other => ScenarioError::Invariant(other.to_string()),
        })?;
        Ok(config)
    }
}

/// Loads a scenario file and builds its configuration in one go.
pub fn load_config(path: impl AsRef<Path>) -> Result<(Scenario, SimConfig), ScenarioError> {
    let path = path.as_ref();
    let scenario = Scenario::load(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let config = scenario.sim_config(base)?;
    Ok((scenario, config))
}
