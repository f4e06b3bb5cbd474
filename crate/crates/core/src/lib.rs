//! Predictive-silence telemetry for underwater vehicles on low-rate acoustic links.
//!
//! The vehicle predicts its own sensor and kinematic data and stays quiet while the
//! predictions hold, sending only periodic check-points and 32-byte priority packets for
//! data that could not be predicted. The shore side mirrors the vehicle's predictor and
//! answers with 32-byte control packets.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod center;
pub mod codec;
pub mod compression;
pub mod guidance;
pub mod link;
pub mod matrix;
pub mod scalar;
pub mod sim;
pub mod telemetry;
pub mod trace;
pub mod vehicle;

pub use scalar::Real;

/// Double-precision aliases used by the protocol agents and the simulator.
pub type Matrix = matrix::Matrix<f64>;
pub type KalmanModel = compression::KalmanModel<f64>;
pub type FilterState = compression::FilterState<f64>;
pub type Residual = compression::Residual<f64>;
pub type EnvCompressorConfig = compression::EnvCompressorConfig<f64>;
pub type KinematicNoise = compression::KinematicNoise<f64>;
pub type TelemetrySample = telemetry::TelemetrySample<f64>;
pub type ScalarField = telemetry::ScalarField<f64>;
pub type Anomaly = telemetry::Anomaly<f64>;
pub type Pose = telemetry::Pose<f64>;
pub type MotionCommand = telemetry::MotionCommand<f64>;

/// Single-precision aliases for constrained targets.
pub mod f32 {
    pub type Matrix = crate::matrix::Matrix<f32>;
    pub type KalmanModel = crate::compression::KalmanModel<f32>;
    pub type FilterState = crate::compression::FilterState<f32>;
    pub type ScalarField = crate::telemetry::ScalarField<f32>;
    pub type Pose = crate::telemetry::Pose<f32>;
}
