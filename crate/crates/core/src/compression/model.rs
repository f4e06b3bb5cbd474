use serde::{Deserialize, Serialize};

use super::{CompressionError, KalmanModel};
use crate::matrix::Matrix;
use crate::scalar::Real;
use crate::telemetry::SensorChannel;

/// Diagonal noise terms for the per-axis constant-velocity model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KinematicNoise<T> {
    /// Q entry for each position state.
    pub q_position: T,
    /// Q entry for each velocity state.
    pub q_velocity: T,
    /// R entry for each observed axis.
    pub r: T,
}

/// One constant-velocity block per observed axis with acceleration as control input.
///
/// State layout is `[p₀, v₀, p₁, v₁, …]`; `H` picks the positions.
pub fn build_default_kinematic_model<T: Real>(
    axes: &[SensorChannel],
    dt: T,
    noise: &KinematicNoise<T>,
) -> Result<KalmanModel<T>, CompressionError> {
    if !(dt > T::zero()) {
        return Err(CompressionError::InvalidConfig("dt must be positive".into()));
    }
    if axes.is_empty() {
        return Err(CompressionError::InvalidConfig("at least one observed axis is required".into()));
    }
    let a = axes.len();
    let n = 2 * a;
    let half = T::lit(0.5);
    let mut f = Matrix::identity(n);
    let mut b = Matrix::zeros(n, a);
    let mut h = Matrix::zeros(a, n);
    let mut q = Matrix::zeros(n, n);
    for i in 0..a {
        let p = 2 * i;
        f[(p, p + 1)] = dt;
        b[(p, i)] = half * dt * dt;
        b[(p + 1, i)] = dt;
        h[(i, p)] = T::one();
        q[(p, p)] = noise.q_position;
        q[(p + 1, p + 1)] = noise.q_velocity;
    }
    let r = Matrix::from_diagonal(&vec![noise.r; a]);
    KalmanModel::new(f, b, h, q, r)
}

/// `(3σ)²` with σ² the axis' R entry, never below `floor`.
pub fn default_tau<T: Real>(model: &KalmanModel<T>, axis: usize, floor: T) -> T {
    let var = model.r()[(axis, axis)];
    (T::lit(9.0) * var).max(floor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::telemetry::ChannelKind;

    fn axis(name: &str) -> SensorChannel {
        SensorChannel::new(9, name, ChannelKind::Kinematic, "m", 0.25)
    }

    #[test]
    fn one_axis_unit_step() {
        let noise = KinematicNoise { q_position: 0.1, q_velocity: 0.2, r: 0.3 };
        let m = build_default_kinematic_model(&[axis("x")], 1.0, &noise).unwrap();
        assert_eq!(m.f(), &Matrix::from_rows(&[vec![1.0, 1.0], vec![0.0, 1.0]]));
        assert_eq!(m.b(), &Matrix::from_rows(&[vec![0.5], vec![1.0]]));
        assert_eq!(m.h(), &Matrix::from_rows(&[vec![1.0, 0.0]]));
        assert_eq!(m.q(), &Matrix::from_diagonal(&[0.1, 0.2]));
    }

    #[test]
    fn zero_process_noise_passes_through() {
        let noise = KinematicNoise { q_position: 0.0, q_velocity: 0.0, r: 1e-4 };
        let m = build_default_kinematic_model(&[axis("x"), axis("y")], 0.25, &noise).unwrap();
        assert_eq!(m.q(), &Matrix::zeros(4, 4));
    }

    #[test]
    fn dimensions_follow_axis_count() {
        let noise = KinematicNoise { q_position: 0.0, q_velocity: 0.0, r: 1.0 };
        let m = build_default_kinematic_model(&[axis("x"), axis("y"), axis("z")], 0.25, &noise).unwrap();
        assert_eq!((m.n(), m.m(), m.k()), (6, 3, 3));
    }

    #[test]
    fn tau_from_measurement_noise() {
        let noise = KinematicNoise { q_position: 0.0, q_velocity: 0.0, r: 4.0 };
        let m = build_default_kinematic_model(&[axis("x")], 0.5, &noise).unwrap();
        assert_eq!(default_tau(&m, 0, 0.0), 36.0);
        assert_eq!(default_tau(&m, 0, 100.0), 100.0);
    }

    #[test]
    fn non_positive_dt_rejected() {
        let noise = KinematicNoise { q_position: 0.0, q_velocity: 0.0, r: 1.0 };
        assert!(build_default_kinematic_model(&[axis("x")], 0.0, &noise).is_err());
    }
}
