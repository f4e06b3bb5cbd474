use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::center::CenterConfig;
use crate::link::ChannelConfig;
use crate::telemetry::{ChannelKind, ChannelRegistry, Mission};
use crate::vehicle::{OperationMode, VehicleConfig};
use crate::{EnvCompressorConfig, KinematicNoise, Pose, ScalarField};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("config is not valid JSON for the schema: {0}")]
    Json(String),
    #[error("unknown config keys: {}", .0.join(", "))]
    UnknownKeys(Vec<String>),
    #[error("invalid config: {}", .0.join("; "))]
    Invalid(Vec<String>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OperatorMode {
    #[default]
    Headless,
    Gateway,
}

/// Step change added to an environmental channel from time `t` on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepInjection {
    pub t: f64,
    pub channel: String,
    pub delta: f64,
}

/// Instantaneous displacement of the true vehicle position at time `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Disturbance {
    pub t: f64,
    #[serde(default)]
    pub dx: f64,
    #[serde(default)]
    pub dy: f64,
    #[serde(default)]
    pub dz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorConfig {
    /// Environmental sampling period, s; a whole number of ticks.
    pub env_period: f64,
    pub env_channels: Vec<String>,
    /// Standard deviation of position and depth measurements, m.
    pub position_noise: f64,
    /// Standard deviation added to every environmental sample.
    pub env_noise: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self {
            env_period: 1.0,
            env_channels: vec!["temperature".into(), "dissolved_oxygen".into()],
            position_noise: 0.0,
            env_noise: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompressionConfig {
    pub env: BTreeMap<String, EnvCompressorConfig>,
    pub kinematic: KinematicNoise,
    /// Lower bound for the per-axis kinematic threshold.
    pub tau_floor: f64,
}

impl Default for CompressionConfig {
    fn default() -> Self {
        Self {
            env: [
                ("temperature".to_owned(), EnvCompressorConfig::new(8, 0.25)),
                ("dissolved_oxygen".to_owned(), EnvCompressorConfig::new(8, 0.04)),
            ]
            .into(),
            kinematic: KinematicNoise { q_position: 1e-6, q_velocity: 1e-4, r: 1e-4 },
            tau_floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PacingConfig {
    /// Simulated seconds per wall-clock second in gateway mode.
    pub speedup: f64,
}

impl Default for PacingConfig {
    fn default() -> Self {
        Self { speedup: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub mode: OperationMode,
    pub operator: OperatorMode,
    pub seed: u64,
    /// Engine tick, s.
    pub dt: f64,
    /// Hard stop, s; defaults to the mission time plus 600 s.
    pub duration: Option<f64>,
    pub mission: Mission,
    pub start: Pose,
    pub fields: BTreeMap<String, ScalarField>,
    pub injected_steps: Vec<StepInjection>,
    pub disturbances: Vec<Disturbance>,
    pub channel: ChannelConfig,
    pub sensors: SensorConfig,
    pub compression: CompressionConfig,
    pub vehicle: VehicleConfig,
    pub center: CenterConfig,
    pub pacing: PacingConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            mode: OperationMode::SemiAutonomous,
            operator: OperatorMode::Headless,
            seed: 1,
            dt: 0.25,
            duration: None,
            mission: Mission::default(),
            start: Pose::default(),
            fields: [
                ("temperature".to_owned(), ScalarField::uniform(10.0)),
                ("dissolved_oxygen".to_owned(), ScalarField::uniform(8.0)),
            ]
            .into(),
            injected_steps: Vec::new(),
            disturbances: Vec::new(),
            channel: ChannelConfig::default(),
            sensors: SensorConfig::default(),
            compression: CompressionConfig::default(),
            vehicle: VehicleConfig::default(),
            center: CenterConfig::default(),
            pacing: PacingConfig::default(),
        }
    }
}

impl SimConfig {
    /// Parses a JSON document, rejecting every unknown key, then validates.
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let mut unknown = Vec::new();
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: SimConfig =
            serde_ignored::deserialize(de, |path| unknown.push(path.to_string())).map_err(|e| ConfigError::Json(e.to_string()))?;
        if !unknown.is_empty() {
            return Err(ConfigError::UnknownKeys(unknown));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn duration(&self) -> f64 {
        self.duration.unwrap_or(self.mission.t_mission + 600.0)
    }

    /// Ticks per environmental sample.
    pub fn env_every(&self) -> u64 {
        (self.sensors.env_period / self.dt).round().max(1.0) as u64
    }

    pub fn registry(&self) -> ChannelRegistry {
        ChannelRegistry::standard(self.sensors.env_period, self.dt)
    }

    pub fn auto_policy(&self) -> bool {
        self.center.auto_policy.unwrap_or(self.operator == OperatorMode::Headless)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut errs = Vec::new();
        let mut check = |ok: bool, msg: &str| {
            if !ok {
                errs.push(msg.to_owned());
            }
        };
        check(self.dt > 0.0 && self.dt.is_finite(), "dt must be positive");
        check(self.duration() > 0.0, "duration must be positive");
        if self.dt > 0.0 {
            let ratio = self.sensors.env_period / self.dt;
            check(ratio >= 1.0 && (ratio - ratio.round()).abs() < 1e-9, "sensors.env_period must be a whole number of ticks");
        }
        check(self.sensors.position_noise >= 0.0, "sensors.position_noise must be >= 0");
        check(self.sensors.env_noise >= 0.0, "sensors.env_noise must be >= 0");
        check(self.start.x.is_finite() && self.start.y.is_finite() && self.start.z.is_finite(), "start must be finite");
        check(self.mission.waypoints.len() < 254, "mission supports at most 253 waypoints");
        check(self.pacing.speedup > 0.0, "pacing.speedup must be positive");
        check(self.compression.tau_floor >= 0.0, "compression.tau_floor must be >= 0");
        let k = &self.compression.kinematic;
        check(k.q_position >= 0.0 && k.q_velocity >= 0.0 && k.r >= 0.0, "compression.kinematic entries must be >= 0");

        let mut push = |r: Result<(), String>, prefix: &str| {
            if let Err(e) = r {
                errs.push(format!("{prefix}{e}"));
            }
        };
        push(self.mission.validate().map_err(|e| e.to_string()), "mission: ");
        push(self.channel.validate().map_err(|e| e.to_string()), "channel: ");
        push(self.vehicle.validate(), "");
        push(self.center.validate(), "");

        let reg = self.registry();
        let is_env = |name: &str| reg.by_name(name).is_some_and(|c| c.kind == ChannelKind::Environmental);
        for name in &self.sensors.env_channels {
            if !is_env(name) {
                errs.push(format!("sensors.env_channels: {name} is not an environmental channel"));
            }
            if !self.fields.contains_key(name) {
                errs.push(format!("fields: missing field for {name}"));
            }
            if !self.compression.env.contains_key(name) {
                errs.push(format!("compression.env: missing settings for {name}"));
            }
        }
        for (name, field) in &self.fields {
            if !is_env(name) {
                errs.push(format!("fields: {name} is not an environmental channel"));
            }
            if let Err(e) = field.validate() {
                errs.push(format!("fields.{name}: {e}"));
            }
        }
        for (name, c) in &self.compression.env {
            if let Err(e) = c.validate() {
                errs.push(format!("compression.env.{name}: {e}"));
            }
        }
        for s in &self.injected_steps {
            if !self.sensors.env_channels.contains(&s.channel) {
                errs.push(format!("injected_steps: {} is not a sampled channel", s.channel));
            }
            if !(s.t >= 0.0 && s.delta.is_finite()) {
                errs.push("injected_steps: t must be >= 0 and delta finite".into());
            }
        }
        for d in &self.disturbances {
            if !(d.t >= 0.0 && d.dx.is_finite() && d.dy.is_finite() && d.dz.is_finite()) {
                errs.push("disturbances: t must be >= 0 and offsets finite".into());
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(errs))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_json() {
        let cfg = SimConfig::default();
        assert_eq!(SimConfig::from_json(&cfg.to_json()).unwrap(), cfg);
        assert_eq!(SimConfig::from_json("{}").unwrap(), cfg);
    }

    #[test]
    fn lists_every_unknown_key() {
        let err = SimConfig::from_json(r#"{"sead": 3, "channel": {"distanse": 10}, "mission": {"waypoints": [{"x":0,"y":0,"z":0}], "t_mission": 10, "checkpoint_period": 5, "speed": 1, "colour": 1}}"#)
            .unwrap_err();
        let ConfigError::UnknownKeys(keys) = err else { panic!("{err:?}") };
        assert_eq!(keys, vec!["sead", "channel.distanse", "mission.colour"]);
    }

    #[test]
    fn collects_validation_errors() {
        let err = SimConfig::from_json(r#"{"dt": 0.3, "sensors": {"env_channels": ["depth"]}}"#).unwrap_err();
        let ConfigError::Invalid(msgs) = err else { panic!("{err:?}") };
        assert!(msgs.iter().any(|m| m.contains("env_period")));
        assert!(msgs.iter().any(|m| m.contains("depth is not an environmental channel")));
    }

    #[test]
    fn policy_defaults_follow_operator_mode() {
        let mut cfg = SimConfig::default();
        assert!(cfg.auto_policy());
        cfg.operator = OperatorMode::Gateway;
        assert!(!cfg.auto_policy());
        cfg.center.auto_policy = Some(true);
        assert!(cfg.auto_policy());
    }
}
