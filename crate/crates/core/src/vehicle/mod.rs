//! Vehicle side of the semi-autonomous protocol: silence while predictions hold,
//! periodic check-points, priority packets for unpredicted data, local decisions for
//! urgent events, and the return leg once the mission clock runs out.

mod conformance;

use serde::{Deserialize, Serialize};

use crate::codec::{
    encode_data, CheckpointPayload, Command, ControlPacket, DataPacket, PriorityPayload, PriorityRecord, Sensitivity,
    CURSOR_OFF_PLAN, CURSOR_RETURNING, MAX_RECORDS,
};
use crate::compression::{
    classify, innovation, kf_predict, kf_update, EnvDetector, Predictability, Residual,
};
use crate::guidance::{control_input, steer, velocity, DeadReckoner, GuidanceConfig, Plan, Target};
use crate::telemetry::{channels, wrap_angle, ChannelId, ChannelKind, Mission, Waypoint};
use crate::trace::{Source, TraceEvent, TraceRecord};
use crate::{EnvCompressorConfig, FilterState, KalmanModel, Matrix, MotionCommand, Pose, TelemetrySample};

pub use conformance::{check_conformance, check_event_ordering, is_allowed_transition, ConformanceError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum VehiclePhase {
    AwaitStart,
    OnMission,
    SelfDetermined,
    AwaitCommandOnPath,
    Returning,
    Done,
}

impl VehiclePhase {
    /// Phases in which sensing, prediction and check-points run.
    pub fn is_active(self) -> bool {
        matches!(self, Self::OnMission | Self::SelfDetermined | Self::AwaitCommandOnPath)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OperationMode {
    #[default]
    SemiAutonomous,
    /// No acoustic link at all; the vehicle flies its plan from t = 0.
    Autonomous,
    /// Every sample of the streamed channels is sent, three per packet.
    NaiveStreaming,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VehicleConfig {
    pub guidance: GuidanceConfig,
    /// Distance to the self-determined waypoint, m.
    pub local_step: f64,
    /// Unacked priority packets older than this are resent at the next check-point slot, s.
    pub retransmit_after: f64,
    /// Minimum spacing between events on one channel, s.
    pub refractory: f64,
    /// Environmental events with |deviation| > factor·√T_h are delay-sensitive.
    pub sensitivity_factor: f64,
    /// Seconds from full to empty battery.
    pub battery_life: f64,
}

impl Default for VehicleConfig {
    fn default() -> Self {
        Self {
            guidance: GuidanceConfig::default(),
            local_step: 10.0,
            retransmit_after: 30.0,
            refractory: 5.0,
            sensitivity_factor: 2.0,
            battery_life: 7200.0,
        }
    }
}

impl VehicleConfig {
    pub fn validate(&self) -> Result<(), String> {
        self.guidance.validate()?;
        for (name, v) in [
            ("local_step", self.local_step),
            ("retransmit_after", self.retransmit_after),
            ("sensitivity_factor", self.sensitivity_factor),
            ("battery_life", self.battery_life),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("vehicle.{name} must be positive"));
            }
        }
        if !(self.refractory >= 0.0) {
            return Err("vehicle.refractory must be >= 0".into());
        }
        Ok(())
    }
}

/// Everything the vehicle measures in one tick.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorFrame {
    pub t: f64,
    /// Tick index of `t`.
    pub tick: u64,
    /// Measured x, y, depth.
    pub position: [f64; 3],
    pub heading: f64,
    /// accel x/y/z then gyro x/y/z.
    pub imu: [f64; 6],
    /// Environmental samples taken this tick.
    pub env: Vec<(ChannelId, f64)>,
}

impl SensorFrame {
    pub fn pose(&self) -> Pose {
        Pose::new(self.position[0], self.position[1], self.position[2], self.heading)
    }

    /// The seven default kinematic channels as samples.
    pub fn kinematic_samples(&self) -> [TelemetrySample; 7] {
        let mut vals = [0.0; 7];
        vals[..6].copy_from_slice(&self.imu);
        vals[6] = self.position[2];
        std::array::from_fn(|i| TelemetrySample { t: self.t, channel: channels::DEFAULT_KINEMATIC[i], value: vals[i] })
    }
}

/// One unpredicted observation that leads to exactly one priority packet.
#[derive(Debug, Clone, PartialEq)]
pub struct EventRecord {
    pub t: f64,
    pub channel: ChannelId,
    pub kind: ChannelKind,
    pub sensitivity: Sensitivity,
    /// Flagged sample first, then its predecessor when there is one.
    pub samples: Vec<TelemetrySample>,
    /// Spatial gradient estimate in channel units per meter; zero for kinematic events.
    pub gradient: [f64; 2],
}

/// Waypoint for a self-determined trajectory.
///
/// Environmental events step `step` meters up the measured gradient (down it for falling
/// values is already encoded in the gradient's sign). Kinematic events and a zero gradient
/// keep station at the current pose.
pub fn decide_local_trajectory(event: &EventRecord, pose: &Pose, step: f64) -> Waypoint {
    let [gx, gy] = event.gradient;
    let norm = gx.hypot(gy);
    if event.kind == ChannelKind::Kinematic || !(norm > 1e-12) {
        return Waypoint::new(pose.x, pose.y, pose.z);
    }
    Waypoint::new(pose.x + step * gx / norm, pose.y + step * gy / norm, pose.z)
}

/// Static inputs shared with the center so both predict alike.
#[derive(Debug, Clone)]
pub struct VehicleSetup {
    pub mode: OperationMode,
    pub mission: Mission,
    pub home: Waypoint,
    pub dt: f64,
    /// Three-axis (x, y, depth) kinematic model.
    pub model: KalmanModel,
    /// Per-axis squared-innovation thresholds.
    pub tau: [f64; 3],
    pub env: Vec<(ChannelId, EnvCompressorConfig)>,
    pub cfg: VehicleConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VehicleStats {
    pub checkpoints_sent: u64,
    pub priority_packets_sent: u64,
    pub retransmissions: u64,
    /// Records in first transmissions plus one per check-point.
    pub points_transmitted: u64,
    pub controls_dropped: u64,
    pub events: u64,
}

#[derive(Debug, Clone, Default)]
pub struct VehicleOutput {
    pub packets: Vec<DataPacket>,
    pub trace: Vec<TraceRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Route {
    Plan,
    /// Investigate a center-assigned waypoint, then resume the plan.
    Detour(Waypoint),
    /// Self-determined waypoint; keep station there.
    Local(Waypoint),
    /// Plan replaced by a single waypoint.
    Reprogrammed(Waypoint),
    Home,
}

#[derive(Debug, Clone)]
struct EnvChannel {
    id: ChannelId,
    threshold: f64,
    detector: EnvDetector<f64>,
    prev: Option<(f64, f64, [f64; 2])>,
    last_event: Option<f64>,
}

#[derive(Debug, Clone)]
struct Unacked {
    packet: DataPacket,
    last_sent: f64,
}

#[derive(Debug, Clone)]
pub struct Vehicle {
    setup: VehicleSetup,
    phase: VehiclePhase,
    t_start: Option<f64>,
    last_checkpoint_t: Option<f64>,
    next_checkpoint_seq: u16,
    next_priority_seq: u16,
    last_control_seq: Option<u16>,
    cmd: MotionCommand,
    plan: Plan,
    route: Route,
    reprogrammed: Option<Waypoint>,
    tracker: Option<FilterState>,
    pending_u: [f64; 3],
    twin: DeadReckoner,
    last_checkpoint: Option<CheckpointPayload>,
    env: Vec<EnvChannel>,
    kin_last_event: [Option<f64>; 3],
    unacked: Vec<Unacked>,
    naive_buf: Vec<PriorityRecord>,
    stats: VehicleStats,
    events: Vec<EventRecord>,
}

const KIN_AXES: [ChannelId; 3] = [channels::POS_X, channels::POS_Y, channels::DEPTH];

impl Vehicle {
    pub fn new(setup: VehicleSetup) -> Result<Self, String> {
        setup.cfg.validate()?;
        setup.mission.validate().map_err(|e| e.to_string())?;
        let plan = Plan::new(setup.mission.waypoints.clone(), setup.mission.repeat);
        let twin = DeadReckoner::new(
            setup.model.clone(),
            plan.clone(),
            setup.home,
            setup.mission.speed,
            setup.cfg.guidance,
            setup.dt,
        )
        .map_err(|e| e.to_string())?;
        let env = setup
            .env
            .iter()
            .map(|(id, cfg)| {
                Ok(EnvChannel {
                    id: *id,
                    threshold: cfg.threshold,
                    detector: EnvDetector::new(*cfg).map_err(|e| e.to_string())?,
                    prev: None,
                    last_event: None,
                })
            })
            .collect::<Result<_, String>>()?;
        let phase = match setup.mode {
            OperationMode::Autonomous => VehiclePhase::OnMission,
            _ => VehiclePhase::AwaitStart,
        };
        let t_start = (setup.mode == OperationMode::Autonomous).then_some(0.0);
        Ok(Self {
            setup,
            phase,
            t_start,
            last_checkpoint_t: None,
            next_checkpoint_seq: 0,
            next_priority_seq: 1,
            last_control_seq: None,
            cmd: MotionCommand::hold(),
            plan,
            route: Route::Plan,
            reprogrammed: None,
            tracker: None,
            pending_u: [0.0; 3],
            twin,
            last_checkpoint: None,
            env,
            kin_last_event: [None; 3],
            unacked: Vec::new(),
            naive_buf: Vec::new(),
            stats: VehicleStats::default(),
            events: Vec::new(),
        })
    }

    pub fn phase(&self) -> VehiclePhase {
        self.phase
    }

    /// Command in force until the next tick.
    pub fn motion(&self) -> MotionCommand {
        self.cmd
    }

    pub fn stats(&self) -> &VehicleStats {
        &self.stats
    }

    pub fn events(&self) -> &[EventRecord] {
        &self.events
    }

    pub fn mission_start(&self) -> Option<f64> {
        self.t_start
    }

    /// Dead-reckoned position the center should also hold, with the check-point it started from.
    pub fn twin_estimate(&self) -> Option<(u16, [f64; 3])> {
        Some((self.last_checkpoint?.seq, self.twin.position()?))
    }

    pub fn unacked(&self) -> usize {
        self.unacked.len()
    }

    fn record(&self, t: f64, event: TraceEvent) -> TraceRecord {
        TraceRecord::new(t, Source::Vehicle, event).with_phase(self.phase)
    }

    fn set_phase(&mut self, t: f64, to: VehiclePhase, out: &mut VehicleOutput) {
        if to != self.phase {
            let from = self.phase;
            self.phase = to;
            out.trace.push(self.record(t, TraceEvent::PhaseChange { from, to }));
        }
    }

    fn cursor(&self) -> u8 {
        match self.route {
            Route::Plan if self.plan.cursor() < CURSOR_RETURNING as usize => self.plan.cursor() as u8,
            Route::Home => CURSOR_RETURNING,
            _ => CURSOR_OFF_PLAN,
        }
    }

    fn battery(&self, now: f64) -> u8 {
        let used = (now - self.t_start.unwrap_or(now)) / self.setup.cfg.battery_life;
        (100.0 - (used * 100.0).floor()).clamp(0.0, 100.0) as u8
    }

    fn emit_checkpoint(&mut self, frame: &SensorFrame, out: &mut VehicleOutput) {
        let mut heading_cdeg = (frame.heading.to_degrees() * 100.0).round() as i32;
        if heading_cdeg <= -18_000 {
            heading_cdeg += 36_000;
        }
        let cp = CheckpointPayload {
            seq: self.next_checkpoint_seq,
            t_ds: (frame.t * 10.0).round() as u32,
            x_cm: (frame.position[0] * 100.0).round() as i32,
            y_cm: (frame.position[1] * 100.0).round() as i32,
            z_cm: (frame.position[2] * 100.0).round() as i32,
            heading_cdeg: heading_cdeg.min(18_000) as i16,
            battery: self.battery(frame.t),
            cursor: self.cursor(),
        };
        self.next_checkpoint_seq = self.next_checkpoint_seq.wrapping_add(1);
        self.last_checkpoint_t = Some(frame.t);
        self.last_checkpoint = Some(cp);
        self.twin.snap(&cp, frame.tick);
        let packet = DataPacket::checkpoint(cp);
        let bytes = encode_data(&packet).expect("check-point fields are in range");
        let (x, y, z) = (cp.x_cm as f64 / 100.0, cp.y_cm as f64 / 100.0, cp.z_cm as f64 / 100.0);
        let rec = self.record(frame.t, TraceEvent::CheckpointTx { seq: cp.seq, x, y, z, cursor: cp.cursor });
        out.trace.push(rec.with_packet(&bytes));
        out.packets.push(packet);
        self.stats.checkpoints_sent += 1;
        self.stats.points_transmitted += 1;
    }

    fn emit_priority(&mut self, t: f64, sensitivity: Sensitivity, records: Vec<PriorityRecord>, out: &mut VehicleOutput) {
        let payload = PriorityPayload {
            seq: self.next_priority_seq,
            t_ds: (t * 10.0).round() as u32,
            sensitivity,
            records,
        };
        self.next_priority_seq = self.next_priority_seq.wrapping_add(1);
        let priority = 1 + sensitivity as u16;
        let packet = DataPacket::priority(priority, payload);
        if self.setup.mode == OperationMode::SemiAutonomous {
            self.unacked.push(Unacked { packet: packet.clone(), last_sent: t });
        }
        self.send_priority(t, packet, false, out);
    }

    fn send_priority(&mut self, t: f64, packet: DataPacket, retransmission: bool, out: &mut VehicleOutput) {
        let bytes = encode_data(&packet).expect("priority records are range-checked");
        let crate::codec::DataPayload::Priority(p) = &packet.payload else {
            unreachable!("priority packet")
        };
        let ev = TraceEvent::PriorityTx {
            seq: p.seq,
            priority: packet.priority,
            sensitivity: p.sensitivity,
            records: p.records.len(),
            retransmission,
        };
        out.trace.push(self.record(t, ev).with_packet(&bytes));
        if retransmission {
            self.stats.retransmissions += 1;
        } else {
            self.stats.priority_packets_sent += 1;
            self.stats.points_transmitted += p.records.len() as u64;
        }
        out.packets.push(packet);
    }

    fn start_mission(&mut self, frame: &SensorFrame, out: &mut VehicleOutput) {
        self.t_start = Some(frame.t);
        self.set_phase(frame.t, VehiclePhase::OnMission, out);
        if self.setup.mode == OperationMode::SemiAutonomous {
            self.emit_checkpoint(frame, out);
        }
    }

    /// Applies one decoded control packet received at `frame.t`.
    pub fn handle_control(&mut self, pkt: &ControlPacket, frame: &SensorFrame) -> VehicleOutput {
        let mut out = VehicleOutput::default();
        let now = frame.t;
        if self.setup.mode == OperationMode::Autonomous {
            return out;
        }
        let duplicate = self.last_control_seq.is_some_and(|last| pkt.seq <= last);
        out.trace.push(self.record(
            now,
            TraceEvent::ControlRx { seq: pkt.seq, command: pkt.command, ack_seq: pkt.ack_seq, duplicate },
        ));
        if duplicate {
            return out;
        }
        self.last_control_seq = Some(pkt.seq);
        self.unacked.retain(|u| u.packet.seq() > pkt.ack_seq);

        match (self.phase, pkt.command) {
            (VehiclePhase::AwaitStart, _) => self.start_mission(frame, &mut out),
            (VehiclePhase::Returning | VehiclePhase::Done, _) => {}
            (_, Command::Return) => {
                self.route = Route::Home;
                self.set_phase(now, VehiclePhase::Returning, &mut out);
            }
            (_, Command::NewWaypoint) => {
                self.route = Route::Detour(relative_waypoint(pkt, &frame.pose()));
                self.set_phase(now, VehiclePhase::OnMission, &mut out);
            }
            (_, Command::Reprogram) => {
                let wp = relative_waypoint(pkt, &frame.pose());
                self.reprogrammed = Some(wp);
                self.route = Route::Reprogrammed(wp);
                self.set_phase(now, VehiclePhase::OnMission, &mut out);
            }
            (VehiclePhase::OnMission, Command::Continue) => {}
            (_, Command::ResumeOriginal | Command::Continue) => {
                self.route = self.reprogrammed.map_or(Route::Plan, Route::Reprogrammed);
                self.set_phase(now, VehiclePhase::OnMission, &mut out);
            }
        }
        out
    }

    /// Counts a control frame that failed to decode.
    pub fn drop_control(&mut self, t: f64, reason: String) -> TraceRecord {
        self.stats.controls_dropped += 1;
        self.record(t, TraceEvent::ControlDropped { reason })
    }

    fn kinematic_events(&mut self, frame: &SensorFrame) -> Vec<EventRecord> {
        let z = frame.position;
        let model = &self.setup.model;
        let Some(state) = &self.tracker else {
            let p = Matrix::from_diagonal(&[model.r()[(0, 0)], 0.0, model.r()[(1, 1)], 0.0, model.r()[(2, 2)], 0.0]);
            self.tracker = Some(FilterState::new(model, &[z[0], 0.0, z[1], 0.0, z[2], 0.0], p).expect("3-axis state"));
            return Vec::new();
        };
        let Ok(pred) = kf_predict(model, state, &self.pending_u) else {
            return Vec::new();
        };
        let innov = innovation(model, &pred, &z).expect("3 observations");
        let mut samples = Vec::new();
        for (axis, &ch) in KIN_AXES.iter().enumerate() {
            let residual = Residual::new(ch, z[axis] - innov[axis], z[axis]);
            let refractory = self.kin_last_event[axis].is_some_and(|t| frame.t - t < self.setup.cfg.refractory);
            if classify(&residual, self.setup.tau[axis]) == Predictability::Unpredictable && !refractory {
                self.kin_last_event[axis] = Some(frame.t);
                samples.push(TelemetrySample { t: frame.t, channel: ch, value: z[axis] });
            }
        }
        self.tracker = Some(kf_update(model, &pred, &z).unwrap_or(pred));
        if samples.is_empty() {
            return Vec::new();
        }
        vec![EventRecord {
            t: frame.t,
            channel: samples[0].channel,
            kind: ChannelKind::Kinematic,
            sensitivity: Sensitivity::Insensitive,
            samples,
            gradient: [0.0; 2],
        }]
    }

    fn env_events(&mut self, frame: &SensorFrame, out: &mut VehicleOutput) -> Vec<EventRecord> {
        let mut events = Vec::new();
        let pos = [frame.position[0], frame.position[1]];
        for &(id, value) in &frame.env {
            let Some(ch) = self.env.iter_mut().find(|c| c.id == id) else { continue };
            let obs = ch.detector.push(value);
            if let Some(run) = obs.run_closed {
                let rec = TraceRecord::new(frame.t, Source::Vehicle, TraceEvent::EventClosed {
                    channel: id.0,
                    start: run.start,
                    end: run.end,
                })
                .with_phase(self.phase);
                out.trace.push(rec);
            }
            let prev = ch.prev.replace((frame.t, value, pos));
            let refractory = ch.last_event.is_some_and(|t| frame.t - t < self.setup.cfg.refractory);
            if !obs.run_started || refractory {
                continue;
            }
            ch.last_event = Some(frame.t);
            let dev = obs.deviation(value).unwrap_or(0.0);
            let sensitivity = if dev.abs() > self.setup.cfg.sensitivity_factor * ch.threshold.sqrt() {
                Sensitivity::Sensitive
            } else {
                Sensitivity::Insensitive
            };
            let mut samples = vec![TelemetrySample { t: frame.t, channel: id, value }];
            let mut gradient = [0.0; 2];
            if let Some((pt, pv, pp)) = prev {
                samples.push(TelemetrySample { t: pt, channel: id, value: pv });
                let (dx, dy) = (pos[0] - pp[0], pos[1] - pp[1]);
                let ds = dx.hypot(dy);
                if ds > 1e-9 {
                    let slope = (value - pv) / ds;
                    gradient = [slope * dx / ds, slope * dy / ds];
                }
            }
            out.trace.push(self.record(frame.t, TraceEvent::EventDetected {
                channel: id.0,
                kind: ChannelKind::Environmental,
                sensitivity,
                deviation: dev,
            }));
            events.push(EventRecord { t: frame.t, channel: id, kind: ChannelKind::Environmental, sensitivity, samples, gradient });
        }
        events
    }

    fn raise(&mut self, event: EventRecord, frame: &SensorFrame, out: &mut VehicleOutput) {
        let t = frame.t;
        if event.kind == ChannelKind::Kinematic {
            out.trace.push(self.record(t, TraceEvent::EventDetected {
                channel: event.channel.0,
                kind: event.kind,
                sensitivity: event.sensitivity,
                deviation: 0.0,
            }));
        }
        let records = event
            .samples
            .iter()
            .take(MAX_RECORDS)
            .map(|s| {
                let age = ((t - s.t) * 10.0).round().clamp(0.0, u16::MAX as f64) as u16;
                PriorityRecord::from_value(s.channel.0, age, s.value)
            })
            .collect::<Result<Vec<_>, _>>();
        match records {
            Ok(records) => self.emit_priority(t, event.sensitivity, records, out),
            Err(e) => out.trace.push(self.record(t, TraceEvent::ControlDropped { reason: e.to_string() })),
        }
        match event.sensitivity {
            Sensitivity::Sensitive => {
                let wp = decide_local_trajectory(&event, &frame.pose(), self.setup.cfg.local_step);
                self.route = Route::Local(wp);
                out.trace.push(self.record(t, TraceEvent::LocalTrajectory { x: wp.x, y: wp.y, z: wp.z }));
                self.set_phase(t, VehiclePhase::SelfDetermined, out);
            }
            Sensitivity::Insensitive => {
                if self.phase == VehiclePhase::OnMission {
                    self.set_phase(t, VehiclePhase::AwaitCommandOnPath, out);
                }
            }
        }
        self.stats.events += 1;
        self.events.push(event);
    }

    fn stream_naive(&mut self, frame: &SensorFrame, out: &mut VehicleOutput) {
        let samples = frame
            .kinematic_samples()
            .into_iter()
            .chain(frame.env.iter().map(|&(channel, value)| TelemetrySample { t: frame.t, channel, value }));
        for s in samples {
            if let Ok(r) = PriorityRecord::from_value(s.channel.0, 0, s.value) {
                self.naive_buf.push(r);
            }
            if self.naive_buf.len() == MAX_RECORDS {
                let records = std::mem::take(&mut self.naive_buf);
                self.emit_priority(frame.t, Sensitivity::Insensitive, records, out);
            }
        }
    }

    fn steer_to(&mut self, frame: &SensorFrame, target: Target) {
        let pose = frame.pose();
        let dt = self.setup.dt;
        let next = steer(&pose, &self.cmd, target, self.setup.mission.speed, &self.setup.cfg.guidance, dt);
        let heading = wrap_angle(pose.heading + next.turn_rate * dt);
        self.pending_u = control_input(velocity(pose.heading, &self.cmd), velocity(heading, &next), dt);
        self.cmd = next;
    }

    fn home_target(&self) -> Target {
        Target::Hold(self.setup.home)
    }

    /// One engine tick: sense, predict, maybe transmit, and pick the next motion command.
    pub fn handle_tick(&mut self, frame: &SensorFrame) -> VehicleOutput {
        let mut out = VehicleOutput::default();
        let now = frame.t;
        match self.phase {
            VehiclePhase::AwaitStart | VehiclePhase::Done => {
                self.steer_to(frame, Target::Stop);
                return out;
            }
            VehiclePhase::Returning => {
                let home = self.setup.home;
                let r = self.setup.cfg.guidance.arrival_radius;
                let arrived = frame.pose().horizontal_distance_to(home.x, home.y) < r
                    && (frame.position[2] - home.z).abs() < r
                    && self.cmd.speed.abs() < 1e-9;
                if arrived {
                    self.set_phase(now, VehiclePhase::Done, &mut out);
                    self.steer_to(frame, Target::Stop);
                } else {
                    self.steer_to(frame, self.home_target());
                }
                return out;
            }
            _ => {}
        }
        let t_start = self.t_start.unwrap_or(0.0);
        if now - t_start > self.setup.mission.t_mission + 1e-9 {
            self.route = Route::Home;
            self.set_phase(now, VehiclePhase::Returning, &mut out);
            self.steer_to(frame, self.home_target());
            return out;
        }

        match self.setup.mode {
            OperationMode::SemiAutonomous => {
                if let Err(e) = self.twin.advance_to(frame.tick) {
                    out.trace.push(self.record(now, TraceEvent::ControlDropped { reason: e.to_string() }));
                }
                let mut events = self.kinematic_events(frame);
                events.extend(self.env_events(frame, &mut out));
                if events.is_empty() {
                    let due = self
                        .last_checkpoint_t
                        .is_none_or(|t| now - t >= self.setup.mission.checkpoint_period - 1e-9);
                    if due {
                        self.emit_checkpoint(frame, &mut out);
                        self.retransmit(now, &mut out);
                    }
                } else {
                    for e in events {
                        self.raise(e, frame, &mut out);
                    }
                }
            }
            OperationMode::NaiveStreaming => {
                self.tracker_only(frame);
                self.stream_naive(frame, &mut out);
            }
            OperationMode::Autonomous => self.tracker_only(frame),
        }

        let r = self.setup.cfg.guidance.arrival_radius;
        let (x, y) = (frame.position[0], frame.position[1]);
        let target = match self.route {
            Route::Plan => {
                self.plan.update(x, y, r);
                self.plan.target()
            }
            Route::Detour(wp) => {
                if (wp.x - x).hypot(wp.y - y) < r {
                    self.route = Route::Plan;
                    self.plan.update(x, y, r);
                    self.plan.target()
                } else {
                    Target::Go(wp)
                }
            }
            Route::Local(wp) | Route::Reprogrammed(wp) => Target::Hold(wp),
            Route::Home => self.home_target(),
        };
        self.steer_to(frame, target);
        out
    }

    fn tracker_only(&mut self, frame: &SensorFrame) {
        // keeps the filter warm so switching modes needs no special case
        let _ = self.kinematic_events(frame);
    }

    fn retransmit(&mut self, now: f64, out: &mut VehicleOutput) {
        let after = self.setup.cfg.retransmit_after;
        let due: Vec<usize> = (0..self.unacked.len()).filter(|&i| now - self.unacked[i].last_sent >= after).collect();
        for i in due {
            self.unacked[i].last_sent = now;
            let packet = self.unacked[i].packet.clone();
            self.send_priority(now, packet, true, out);
        }
    }

}

fn relative_waypoint(pkt: &ControlPacket, pose: &Pose) -> Waypoint {
    let bearing = pose.heading + (pkt.angle_mdeg as f64 / 1000.0).to_radians();
    let d = pkt.distance_cm as f64 / 100.0;
    Waypoint::new(pose.x + d * bearing.cos(), pose.y + d * bearing.sin(), pose.z + pkt.vertical_cm as f64 / 100.0)
}

#[cfg(test)]
mod tests;
