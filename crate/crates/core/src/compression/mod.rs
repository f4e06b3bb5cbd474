//! Model-free environmental selection and model-based kinematic prediction.

mod classify;
mod env;
mod kalman;
mod model;

use thiserror::Error;

pub use classify::{classify, Predictability, Residual};
pub use env::{env_flag_points, env_flag_samples, EnvCompressorConfig, EnvDetector, EnvObservation, FlagRun, FlaggedPoints};
pub use kalman::{innovation, kf_predict, kf_update, FilterState, KalmanModel};
pub use model::{build_default_kinematic_model, default_tau, KinematicNoise};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CompressionError {
    #[error("dimension mismatch for {what}: expected {expected:?}, found {found:?}")]
    Dimension { what: &'static str, expected: (usize, usize), found: (usize, usize) },
    #[error("{0} must be symmetric")]
    NotSymmetric(&'static str),
    #[error("{0} must be positive semidefinite")]
    NotPositiveSemidefinite(&'static str),
    #[error("innovation covariance H·P·Hᵀ + R is singular")]
    SingularInnovation,
    #[error("series is empty")]
    EmptySeries,
    #[error("series is not sorted by time at index {0}")]
    Unsorted(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}
