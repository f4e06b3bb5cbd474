//! Waypoint steering and the dead-reckoning predictor run identically by vehicle and center.
//!
//! Both ends snap a [`DeadReckoner`] to the quantized contents of each check-point and then
//! advance it one tick at a time with the same guidance law and the same Kalman model, so
//! their position estimates agree bit for bit until the next check-point.

use serde::{Deserialize, Serialize};

use crate::codec::{CheckpointPayload, CURSOR_OFF_PLAN, CURSOR_RETURNING};
use crate::compression::{kf_predict, CompressionError};
use crate::telemetry::{wrap_angle, Waypoint};
use crate::{FilterState, KalmanModel, Matrix, MotionCommand, Pose};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GuidanceConfig {
    /// rad/s.
    pub max_turn_rate: f64,
    /// m/s.
    pub max_vertical_rate: f64,
    /// Bound on speed and vertical-rate changes, m/s².
    pub max_accel: f64,
    /// Horizontal distance at which a waypoint counts as reached, m.
    pub arrival_radius: f64,
    /// Vertical rate per meter of depth error, 1/s.
    pub depth_gain: f64,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self { max_turn_rate: 0.5, max_vertical_rate: 0.25, max_accel: 0.2, arrival_radius: 1.0, depth_gain: 0.5 }
    }
}

impl GuidanceConfig {
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("max_turn_rate", self.max_turn_rate),
            ("max_vertical_rate", self.max_vertical_rate),
            ("max_accel", self.max_accel),
            ("arrival_radius", self.arrival_radius),
            ("depth_gain", self.depth_gain),
        ];
        match positive.iter().find(|(_, v)| !(*v > 0.0 && v.is_finite())) {
            Some((name, _)) => Err(format!("guidance.{name} must be positive")),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    /// Drive through the waypoint at cruise speed.
    Go(Waypoint),
    /// Drive to the waypoint and stop there.
    Hold(Waypoint),
    /// Decelerate in place.
    Stop,
}

fn approach(current: f64, target: f64, max_step: f64) -> f64 {
    current + (target - current).clamp(-max_step, max_step)
}

/// Next motion command from the current pose and the command in force.
pub fn steer(
    pose: &Pose,
    current: &MotionCommand,
    target: Target,
    cruise: f64,
    cfg: &GuidanceConfig,
    dt: f64,
) -> MotionCommand {
    let dv = cfg.max_accel * dt;
    let (goal, hold) = match target {
        Target::Go(w) => (w, false),
        Target::Hold(w) => (w, true),
        Target::Stop => {
            return MotionCommand {
                speed: approach(current.speed, 0.0, dv),
                turn_rate: 0.0,
                vertical_rate: approach(current.vertical_rate, 0.0, dv),
            }
        }
    };
    let (dx, dy) = (goal.x - pose.x, goal.y - pose.y);
    let dist = dx.hypot(dy);
    let (turn_rate, target_speed) = if hold && dist < cfg.arrival_radius {
        (0.0, 0.0)
    } else {
        let err = wrap_angle(dy.atan2(dx) - pose.heading);
        let mut speed = cruise * err.cos().max(0.0);
        if hold {
            // brake early enough to stop near the goal
            speed = speed.min((2.0 * cfg.max_accel * (dist - 0.5 * cfg.arrival_radius).max(0.0)).sqrt());
        }
        ((err / dt).clamp(-cfg.max_turn_rate, cfg.max_turn_rate), speed)
    };
    let vz = (cfg.depth_gain * (goal.z - pose.z)).clamp(-cfg.max_vertical_rate, cfg.max_vertical_rate);
    MotionCommand {
        speed: approach(current.speed, target_speed, dv),
        turn_rate,
        vertical_rate: approach(current.vertical_rate, vz, dv),
    }
}

/// World-frame velocity `[vx, vy, vz]` for a command flown at `heading`.
pub fn velocity(heading: f64, cmd: &MotionCommand) -> [f64; 3] {
    [cmd.speed * heading.cos(), cmd.speed * heading.sin(), cmd.vertical_rate]
}

/// Acceleration input taking velocity `from` to `to` over one tick.
pub fn control_input(from: [f64; 3], to: [f64; 3], dt: f64) -> [f64; 3] {
    [(to[0] - from[0]) / dt, (to[1] - from[1]) / dt, (to[2] - from[2]) / dt]
}

/// Ordered waypoint list with a cursor on the next waypoint to reach.
#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    waypoints: Vec<Waypoint>,
    repeat: bool,
    cursor: usize,
    complete: bool,
}

impl Plan {
    pub fn new(waypoints: Vec<Waypoint>, repeat: bool) -> Self {
        let complete = waypoints.is_empty();
        Self { waypoints, repeat, cursor: 0, complete }
    }

    pub fn waypoints(&self) -> &[Waypoint] {
        &self.waypoints
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn set_cursor(&mut self, cursor: usize) {
        self.cursor = cursor.min(self.waypoints.len().saturating_sub(1));
        self.complete = self.waypoints.is_empty();
    }

    pub fn is_complete(&self) -> bool {
        self.complete
    }

    /// Advances past every waypoint within `radius` of `(x, y)`, at most one lap per call.
    pub fn update(&mut self, x: f64, y: f64, radius: f64) {
        for _ in 0..self.waypoints.len() {
            if self.complete {
                return;
            }
            let w = self.waypoints[self.cursor];
            if (w.x - x).hypot(w.y - y) >= radius {
                return;
            }
            if self.cursor + 1 < self.waypoints.len() {
                self.cursor += 1;
            } else if self.repeat {
                self.cursor = 0;
            } else {
                self.complete = true;
            }
        }
    }

    pub fn target(&self) -> Target {
        match (self.waypoints.get(self.cursor), self.complete) {
            (Some(&w), false) => Target::Go(w),
            (Some(&w), true) => Target::Hold(w),
            (None, _) => Target::Stop,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Route {
    Plan,
    Home,
    Coast,
}

/// Predict-only copy of the vehicle's kinematic filter, resynchronized at each check-point.
#[derive(Debug, Clone)]
pub struct DeadReckoner {
    model: KalmanModel,
    state: Option<FilterState>,
    plan: Plan,
    home: Waypoint,
    route: Route,
    heading: f64,
    cmd: MotionCommand,
    cruise: f64,
    guidance: GuidanceConfig,
    dt: f64,
    tick: u64,
}

impl DeadReckoner {
    /// `model` must observe exactly three axes (x, y, depth).
    pub fn new(
        model: KalmanModel,
        plan: Plan,
        home: Waypoint,
        cruise: f64,
        guidance: GuidanceConfig,
        dt: f64,
    ) -> Result<Self, CompressionError> {
        if model.m() != 3 || model.n() != 6 || model.k() != 3 {
            return Err(CompressionError::InvalidConfig("dead reckoning needs the three-axis model".into()));
        }
        Ok(Self {
            model,
            state: None,
            plan,
            home,
            route: Route::Plan,
            heading: 0.0,
            cmd: MotionCommand::hold(),
            cruise,
            guidance,
            dt,
            tick: 0,
        })
    }

    pub fn is_synced(&self) -> bool {
        self.state.is_some()
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn state(&self) -> Option<&FilterState> {
        self.state.as_ref()
    }

    /// Estimated `[x, y, z]`.
    pub fn position(&self) -> Option<[f64; 3]> {
        self.state.as_ref().map(|s| {
            let x = s.estimate();
            [x[0], x[2], x[4]]
        })
    }

    pub fn replace_plan(&mut self, plan: Plan) {
        self.plan = plan;
    }

    /// Resets the estimate to a check-point describing tick `tick`.
    pub fn snap(&mut self, cp: &CheckpointPayload, tick: u64) {
        let (x, y, z) = (cp.x_cm as f64 / 100.0, cp.y_cm as f64 / 100.0, cp.z_cm as f64 / 100.0);
        self.heading = wrap_angle((cp.heading_cdeg as f64 / 100.0).to_radians());
        self.cmd = MotionCommand { speed: self.cruise, turn_rate: 0.0, vertical_rate: 0.0 };
        self.route = match cp.cursor {
            CURSOR_RETURNING => Route::Home,
            CURSOR_OFF_PLAN => Route::Coast,
            c => {
                self.plan.set_cursor(c as usize);
                Route::Plan
            }
        };
        let [vx, vy, vz] = velocity(self.heading, &self.cmd);
        self.state = Some(FilterState {
            x: Matrix::column(&[x, vx, y, vy, z, vz]),
            p: Matrix::zeros(6, 6),
            k: Matrix::zeros(6, 3),
        });
        self.tick = tick;
    }

    /// One tick of guidance plus `kf_predict`.
    pub fn step(&mut self) -> Result<(), CompressionError> {
        let Some(state) = &self.state else {
            return Ok(());
        };
        let e = state.estimate();
        let pose = Pose::new(e[0], e[2], e[4], self.heading);
        let u = match self.route {
            Route::Coast => [0.0; 3],
            route => {
                let target = if route == Route::Home {
                    Target::Hold(self.home)
                } else {
                    self.plan.update(pose.x, pose.y, self.guidance.arrival_radius);
                    self.plan.target()
                };
                let next = steer(&pose, &self.cmd, target, self.cruise, &self.guidance, self.dt);
                let heading = wrap_angle(self.heading + next.turn_rate * self.dt);
                let u = control_input(velocity(self.heading, &self.cmd), velocity(heading, &next), self.dt);
                self.heading = heading;
                self.cmd = next;
                u
            }
        };
        self.state = Some(kf_predict(&self.model, state, &u)?);
        self.tick += 1;
        Ok(())
    }

    /// Steps until the estimate describes tick `tick`.
    pub fn advance_to(&mut self, tick: u64) -> Result<(), CompressionError> {
        while self.is_synced() && self.tick < tick {
            self.step()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compression::{build_default_kinematic_model, KinematicNoise};
    use crate::telemetry::{advance_kinematics, SensorChannel, ChannelKind};

    fn model() -> KalmanModel {
        let axes: Vec<_> = ["x", "y", "z"]
            .iter()
            .enumerate()
            .map(|(i, n)| SensorChannel::new(i as u8, n, ChannelKind::Kinematic, "m", 0.25))
            .collect();
        build_default_kinematic_model(&axes, 0.25, &KinematicNoise { q_position: 0.0, q_velocity: 0.0, r: 1e-4 })
            .unwrap()
    }

    #[test]
    fn plan_advances_and_wraps() {
        let mut plan = Plan::new(vec![Waypoint::new(0.0, 0.0, 0.0), Waypoint::new(10.0, 0.0, 0.0)], true);
        plan.update(0.2, 0.0, 1.0);
        assert_eq!(plan.cursor(), 1);
        plan.update(9.5, 0.0, 1.0);
        assert_eq!(plan.cursor(), 0);
        let mut once = Plan::new(vec![Waypoint::new(0.0, 0.0, 0.0)], false);
        once.update(0.0, 0.0, 1.0);
        assert!(once.is_complete());
        assert!(matches!(once.target(), Target::Hold(_)));
    }

    #[test]
    fn turn_rate_is_bounded() {
        let cfg = GuidanceConfig::default();
        let pose = Pose::new(0.0, 0.0, 0.0, 0.0);
        let cmd = steer(&pose, &MotionCommand::hold(), Target::Go(Waypoint::new(0.0, 10.0, 0.0)), 1.0, &cfg, 0.25);
        assert_eq!(cmd.turn_rate, 0.5);
        // facing away from the goal: no forward speed yet
        let behind = steer(&pose, &MotionCommand::hold(), Target::Go(Waypoint::new(-10.0, 0.0, 0.0)), 1.0, &cfg, 0.25);
        assert_eq!(behind.speed, 0.0);
    }

    #[test]
    fn speed_changes_are_rate_limited() {
        let cfg = GuidanceConfig::default();
        let pose = Pose::new(0.0, 0.0, 0.0, 0.0);
        let cmd = steer(&pose, &MotionCommand::hold(), Target::Go(Waypoint::new(50.0, 0.0, 5.0)), 1.0, &cfg, 0.25);
        assert!((cmd.speed - 0.05).abs() < 1e-12);
        assert!((cmd.vertical_rate - 0.05).abs() < 1e-12);
    }

    #[test]
    fn hold_target_stops_near_goal() {
        let cfg = GuidanceConfig::default();
        let goal = Waypoint::new(5.0, 0.0, 0.0);
        let mut pose = Pose::new(0.0, 0.0, 0.0, 0.0);
        let mut cmd = MotionCommand::hold();
        for _ in 0..400 {
            cmd = steer(&pose, &cmd, Target::Hold(goal), 1.0, &cfg, 0.25);
            pose = advance_kinematics(&pose, &cmd, 0.25).unwrap();
        }
        assert!(pose.horizontal_distance_to(goal.x, goal.y) < cfg.arrival_radius);
        assert!(cmd.speed.abs() < 1e-9);
    }

    #[test]
    fn mirrored_reckoners_agree_exactly() {
        let plan = Plan::new(vec![Waypoint::new(20.0, 0.0, 2.0), Waypoint::new(20.0, 20.0, 2.0)], true);
        let home = Waypoint::new(0.0, 0.0, 0.0);
        let cp = CheckpointPayload {
            seq: 3,
            t_ds: 300,
            x_cm: 512,
            y_cm: -33,
            z_cm: 180,
            heading_cdeg: 1234,
            battery: 90,
            cursor: 0,
        };
        let mut a = DeadReckoner::new(model(), plan.clone(), home, 1.0, GuidanceConfig::default(), 0.25).unwrap();
        let mut b = a.clone();
        a.snap(&cp, 120);
        a.advance_to(200).unwrap();
        b.snap(&cp, 120);
        for t in 121..=200 {
            b.advance_to(t).unwrap();
        }
        assert_eq!(a.position(), b.position());
        assert_eq!(a.tick(), 200);
    }

    #[test]
    fn reckoner_follows_noiseless_vehicle_closely() {
        let cfg = GuidanceConfig::default();
        let plan = Plan::new(vec![Waypoint::new(30.0, 0.0, 2.0), Waypoint::new(30.0, 30.0, 2.0)], false);
        let mut pose = Pose::new(0.0, 0.0, 2.0, 0.0);
        let mut cmd = MotionCommand { speed: 1.0, turn_rate: 0.0, vertical_rate: 0.0 };
        let cp = CheckpointPayload { seq: 0, t_ds: 0, x_cm: 0, y_cm: 0, z_cm: 200, heading_cdeg: 0, battery: 100, cursor: 0 };
        let mut r = DeadReckoner::new(model(), plan.clone(), Waypoint::new(0.0, 0.0, 0.0), 1.0, cfg, 0.25).unwrap();
        r.snap(&cp, 0);
        let mut truth_plan = plan;
        for t in 1..=120 {
            truth_plan.update(pose.x, pose.y, cfg.arrival_radius);
            cmd = steer(&pose, &cmd, truth_plan.target(), 1.0, &cfg, 0.25);
            pose = advance_kinematics(&pose, &cmd, 0.25).unwrap();
            r.advance_to(t).unwrap();
        }
        let [x, y, _] = r.position().unwrap();
        assert!((x - pose.x).hypot(y - pose.y) < 0.05, "{x} {y} vs {pose:?}");
    }
}
