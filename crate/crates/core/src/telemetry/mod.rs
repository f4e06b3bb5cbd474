//! Sensor channels, samples, missions and the synthetic ground truth that drives them.

mod field;
mod ingest;
mod kinematics;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use field::{sample_field, Anomaly, ScalarField};
pub use ingest::{ingest_log_csv, parse_log_csv, ChannelSchema};
pub use kinematics::{advance_kinematics, wrap_angle, MotionCommand, Pose};

#[derive(Debug, Error, PartialEq)]
pub enum TelemetryError {
    #[error("io error reading {path}: {message}")]
    Io { path: String, message: String },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("validation error at line {line}: {message}")]
    Validation { line: usize, message: String },
    #[error("time step must be positive, got {0}")]
    NonPositiveStep(f64),
    #[error("invalid mission: {0}")]
    InvalidMission(String),
}

/// Small integer identity of a sensor channel; it is also the wire `channel` byte.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ChannelId(pub u8);

impl fmt::Display for ChannelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ch{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelKind {
    Environmental,
    Kinematic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorChannel {
    pub id: ChannelId,
    pub name: String,
    pub kind: ChannelKind,
    pub units: String,
    /// Seconds between samples.
    pub sample_period: f64,
}

impl SensorChannel {
    pub fn new(id: u8, name: &str, kind: ChannelKind, units: &str, sample_period: f64) -> Self {
        Self { id: ChannelId(id), name: name.to_owned(), kind, units: units.to_owned(), sample_period }
    }
}

/// Well-known channel ids used by the default registry.
pub mod channels {
    use super::ChannelId;

    pub const TEMPERATURE: ChannelId = ChannelId(0);
    pub const DISSOLVED_OXYGEN: ChannelId = ChannelId(1);
    pub const ACCEL_X: ChannelId = ChannelId(2);
    pub const ACCEL_Y: ChannelId = ChannelId(3);
    pub const ACCEL_Z: ChannelId = ChannelId(4);
    pub const GYRO_X: ChannelId = ChannelId(5);
    pub const GYRO_Y: ChannelId = ChannelId(6);
    pub const GYRO_Z: ChannelId = ChannelId(7);
    pub const DEPTH: ChannelId = ChannelId(8);
    pub const POS_X: ChannelId = ChannelId(9);
    pub const POS_Y: ChannelId = ChannelId(10);

    /// The seven 16-bit IMU/pressure channels sampled at 4 Hz.
    pub const DEFAULT_KINEMATIC: [ChannelId; 7] =
        [ACCEL_X, ACCEL_Y, ACCEL_Z, GYRO_X, GYRO_Y, GYRO_Z, DEPTH];
}

/// Set of registered channels, unique by id and by name.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRegistry {
    channels: BTreeMap<ChannelId, SensorChannel>,
}

impl ChannelRegistry {
    pub fn new(list: Vec<SensorChannel>) -> Result<Self, String> {
        let mut channels = BTreeMap::new();
        for ch in list {
            if !(ch.sample_period > 0.0) {
                return Err(format!("channel {} has non-positive sample period", ch.name));
            }
            if channels.values().any(|c: &SensorChannel| c.name == ch.name) {
                return Err(format!("duplicate channel name {}", ch.name));
            }
            if channels.insert(ch.id, ch.clone()).is_some() {
                return Err(format!("duplicate channel id {}", ch.id.0));
            }
        }
        Ok(Self { channels })
    }

    /// Temperature, dissolved oxygen, accelerometer, gyroscope, depth and position fix.
    pub fn standard(env_period: f64, kin_period: f64) -> Self {
        use ChannelKind::*;
        let list = vec![
            SensorChannel::new(0, "temperature", Environmental, "degC", env_period),
            SensorChannel::new(1, "dissolved_oxygen", Environmental, "mg/L", env_period),
            SensorChannel::new(2, "accel_x", Kinematic, "m/s^2", kin_period),
            SensorChannel::new(3, "accel_y", Kinematic, "m/s^2", kin_period),
            SensorChannel::new(4, "accel_z", Kinematic, "m/s^2", kin_period),
            SensorChannel::new(5, "gyro_x", Kinematic, "rad/s", kin_period),
            SensorChannel::new(6, "gyro_y", Kinematic, "rad/s", kin_period),
            SensorChannel::new(7, "gyro_z", Kinematic, "rad/s", kin_period),
            SensorChannel::new(8, "depth", Kinematic, "m", kin_period),
            SensorChannel::new(9, "pos_x", Kinematic, "m", kin_period),
            SensorChannel::new(10, "pos_y", Kinematic, "m", kin_period),
        ];
        Self::new(list).expect("standard registry is consistent")
    }

    pub fn get(&self, id: ChannelId) -> Option<&SensorChannel> {
        self.channels.get(&id)
    }

    pub fn by_name(&self, name: &str) -> Option<&SensorChannel> {
        self.channels.values().find(|c| c.name == name)
    }

    pub fn contains(&self, id: ChannelId) -> bool {
        self.channels.contains_key(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &SensorChannel> {
        self.channels.values()
    }

    /// Keeps only the named channels.
    pub fn restricted_to(&self, names: &[String]) -> Result<Self, String> {
        let mut list = Vec::new();
        for name in names {
            let ch = self.by_name(name).ok_or_else(|| format!("unknown channel {name}"))?;
            list.push(ch.clone());
        }
        Self::new(list)
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TelemetrySample<T> {
    /// Seconds since mission start.
    pub t: T,
    pub channel: ChannelId,
    pub value: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Waypoint {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Mission {
    pub waypoints: Vec<Waypoint>,
    /// Mission duration in seconds, counted from the first control packet.
    pub t_mission: f64,
    pub checkpoint_period: f64,
    /// Cruise speed, m/s.
    pub speed: f64,
    /// Restart the waypoint list after the last one is reached.
    pub repeat: bool,
}

impl Mission {
    pub fn validate(&self) -> Result<(), TelemetryError> {
        let bad = |m: &str| Err(TelemetryError::InvalidMission(m.to_owned()));
        if self.waypoints.is_empty() {
            return bad("at least one waypoint is required");
        }
        if !(self.t_mission > 0.0) {
            return bad("t_mission must be positive");
        }
        if !(self.checkpoint_period > 0.0) {
            return bad("checkpoint_period must be positive");
        }
        if !(self.speed > 0.0) {
            return bad("speed must be positive");
        }
        if self.waypoints.iter().any(|w| !(w.x.is_finite() && w.y.is_finite() && w.z.is_finite())) {
            return bad("waypoints must be finite");
        }
        Ok(())
    }
}

impl Default for Mission {
    fn default() -> Self {
        Self {
            waypoints: vec![
                Waypoint::new(0.0, 0.0, 2.0),
                Waypoint::new(40.0, 0.0, 2.0),
                Waypoint::new(40.0, 40.0, 2.0),
                Waypoint::new(0.0, 40.0, 2.0),
            ],
            t_mission: 600.0,
            checkpoint_period: 30.0,
            speed: 1.0,
            repeat: true,
        }
    }
}
