use serde::{Deserialize, Serialize};

use super::TelemetryError;
use crate::scalar::Real;

/// True vehicle pose. `heading` is in radians, counter-clockwise from +x, wrapped to (−π, π].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose<T> {
    pub x: T,
    pub y: T,
    pub z: T,
    pub heading: T,
}

impl<T: Real> Pose<T> {
    pub fn new(x: T, y: T, z: T, heading: T) -> Self {
        Self { x, y, z, heading }
    }

    pub fn horizontal_distance_to(&self, x: T, y: T) -> T {
        (x - self.x).hypot(y - self.y)
    }
}

/// Constant-speed, constant-turn-rate command with an independent vertical rate.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MotionCommand<T> {
    /// m/s along the heading.
    pub speed: T,
    /// rad/s, positive turns counter-clockwise.
    pub turn_rate: T,
    /// m/s, positive increases z.
    pub vertical_rate: T,
}

impl<T: Real> MotionCommand<T> {
    pub fn hold() -> Self {
        Self { speed: T::zero(), turn_rate: T::zero(), vertical_rate: T::zero() }
    }
}

/// Wraps an angle in radians to (−π, π].
pub fn wrap_angle<T: Real>(a: T) -> T {
    let pi = T::lit(std::f64::consts::PI);
    let two_pi = pi + pi;
    let mut w = a - two_pi * ((a + pi) / two_pi).floor();
    if w <= -pi {
        w = w + two_pi;
    }
    w
}

/// Integrates the pose over `dt` seconds under a constant command.
pub fn advance_kinematics<T: Real>(
    pose: &Pose<T>,
    cmd: &MotionCommand<T>,
    dt: T,
) -> Result<Pose<T>, TelemetryError> {
    if !(dt > T::zero()) {
        return Err(TelemetryError::NonPositiveStep(dt.to_f64_lossy()));
    }
    let h0 = pose.heading;
    let swept = cmd.turn_rate * dt;
    let (dx, dy) = if swept.abs() < T::lit(1e-12) {
        (cmd.speed * h0.cos() * dt, cmd.speed * h0.sin() * dt)
    } else {
        let h1 = h0 + swept;
        let r = cmd.speed / cmd.turn_rate;
        (r * (h1.sin() - h0.sin()), r * (h0.cos() - h1.cos()))
    };
    Ok(Pose {
        x: pose.x + dx,
        y: pose.y + dy,
        z: pose.z + cmd.vertical_rate * dt,
        heading: wrap_angle(h0 + swept),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    #[test]
    fn straight_line() {
        let p = Pose::new(0.0, 0.0, 3.0, 0.0);
        let cmd = MotionCommand { speed: 1.0, turn_rate: 0.0, vertical_rate: 0.0 };
        let q = advance_kinematics(&p, &cmd, 2.0).unwrap();
        assert_eq!((q.x, q.y, q.z, q.heading), (2.0, 0.0, 3.0, 0.0));
    }

    #[test]
    fn zero_dt_is_rejected() {
        let p = Pose::<f64>::default();
        assert_eq!(
            advance_kinematics(&p, &MotionCommand::hold(), 0.0),
            Err(TelemetryError::NonPositiveStep(0.0))
        );
    }

    /// Fine-step Euler integration of the same ODE as an independent reference.
    fn euler(p: Pose<f64>, cmd: MotionCommand<f64>, dt: f64, steps: usize) -> Pose<f64> {
        let h = dt / steps as f64;
        let mut s = p;
        let mut heading = p.heading;
        for _ in 0..steps {
            let mid = heading + 0.5 * cmd.turn_rate * h;
            s.x += cmd.speed * mid.cos() * h;
            s.y += cmd.speed * mid.sin() * h;
            s.z += cmd.vertical_rate * h;
            heading += cmd.turn_rate * h;
        }
        s.heading = wrap_angle(heading);
        s
    }

    #[test]
    fn quarter_turn_matches_fine_step_integration() {
        let p: Pose<f64> = Pose::new(0.0, 0.0, 0.0, 0.0);
        // 90° at 0.1 rad/s takes 5π seconds
        let cmd = MotionCommand { speed: 2.0, turn_rate: 0.1, vertical_rate: 0.05 };
        let dt = FRAC_PI_2 / 0.1;
        let q = advance_kinematics(&p, &cmd, dt).unwrap();
        let r = euler(p, cmd, dt, 200_000);
        assert!((q.heading - FRAC_PI_2).abs() < 1e-12);
        // Closed form: radius 20 m, quarter circle ends at (20, 20).
        assert!((q.x - 20.0).abs() < 1e-9 && (q.y - 20.0).abs() < 1e-9);
        assert!((q.x - r.x).abs() < 1e-6 && (q.y - r.y).abs() < 1e-6 && (q.z - r.z).abs() < 1e-9);
    }

    #[test]
    fn straight_steps_compose() {
        let p: Pose<f64> = Pose::new(1.0, -2.0, 0.5, 0.7);
        let cmd = MotionCommand { speed: 1.3, turn_rate: 0.0, vertical_rate: -0.2 };
        let once = advance_kinematics(&p, &cmd, 3.0).unwrap();
        let half = advance_kinematics(&p, &cmd, 1.5).unwrap();
        let twice = advance_kinematics(&half, &cmd, 1.5).unwrap();
        assert!((once.x - twice.x).abs() < 1e-9);
        assert!((once.y - twice.y).abs() < 1e-9);
        assert!((once.z - twice.z).abs() < 1e-9);
    }

    #[test]
    fn wrap_angle_range() {
        assert!((wrap_angle(3.0f64 * PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(-0.5f64) + 0.5).abs() < 1e-15);
    }
}
