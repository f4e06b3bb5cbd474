use serde::{Deserialize, Serialize};

use crate::scalar::Real;
use crate::telemetry::ChannelId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predictability {
    Predictable,
    Unpredictable,
}

/// One channel's prediction against its measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Residual<T> {
    pub channel: ChannelId,
    pub predicted: T,
    pub measured: T,
    innovation: T,
}

impl<T: Real> Residual<T> {
    pub fn new(channel: ChannelId, predicted: T, measured: T) -> Self {
        Self { channel, predicted, measured, innovation: measured - predicted }
    }

    /// `measured − predicted`.
    pub fn innovation(&self) -> T {
        self.innovation
    }
}

/// Unpredictable iff `innovation² > tau` (strict).
pub fn classify<T: Real>(residual: &Residual<T>, tau: T) -> Predictability {
    let e = residual.innovation();
    if e * e > tau {
        Predictability::Unpredictable
    } else {
        Predictability::Predictable
    }
}
