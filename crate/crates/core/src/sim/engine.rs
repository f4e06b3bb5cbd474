use std::collections::{BTreeMap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::config::SimConfig;
use super::metrics::{LatencySample, LossCounts, MetricsReport, QueueSample, RunCounts};
use crate::center::{ControlCenter, FieldError, OperatorCommand, PendingEvent, TrackPoint};
use crate::codec::{decode_control, decode_data, encode_control, CheckpointPayload, Frame, PACKET_LEN};
use crate::compression::{build_default_kinematic_model, default_tau};
use crate::guidance::{velocity, DeadReckoner, Plan};
use crate::link::{AcousticLink, DeliveryEvent, Direction};
use crate::telemetry::{advance_kinematics, ChannelId, Waypoint};
use crate::trace::{Source, TraceEvent, TraceRecord};
use crate::vehicle::{OperationMode, SensorFrame, Vehicle, VehicleOutput, VehiclePhase, VehicleSetup, VehicleStats};
use crate::Pose;

#[derive(Debug, Clone, PartialEq)]
pub enum SubmitError {
    /// The run has ended or never started.
    NoActiveRun,
    Field(FieldError),
}

impl std::fmt::Display for SubmitError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SubmitError::NoActiveRun => write!(f, "no active run"),
            SubmitError::Field(e) => write!(f, "{}: {}", e.field, e.reason),
        }
    }
}

impl std::error::Error for SubmitError {}

/// Point-in-time view of a run for late subscribers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub t: f64,
    pub tick: u64,
    pub mode: OperationMode,
    pub phase: VehiclePhase,
    pub finished: Option<String>,
    pub t_mission: f64,
    pub mission_start: Option<f64>,
    pub waypoints: Vec<Waypoint>,
    pub last_checkpoint: Option<CheckpointPayload>,
    pub reported_track: Vec<TrackPoint>,
    pub mirror: Option<[f64; 3]>,
    pub pending_events: Vec<PendingEvent>,
    pub issued_seq: u16,
    pub ack_seq: u16,
    pub auto_policy: bool,
    pub uplink_queue: usize,
    pub downlink_queue: usize,
}

struct InFlight {
    order: u64,
    event: DeliveryEvent,
}

/// Fixed-tick simulation of one vehicle, one center and the acoustic channel between them.
pub struct Engine {
    cfg: SimConfig,
    tick: u64,
    truth: Pose,
    prev_velocity: [f64; 3],
    vehicle: Vehicle,
    center: ControlCenter,
    link: Option<AcousticLink>,
    rng: ChaCha8Rng,
    env: Vec<(ChannelId, String)>,
    queues: [VecDeque<Frame>; 2],
    in_flight: Vec<InFlight>,
    tx_order: u64,
    disturbances_applied: usize,
    pending_trace: Vec<TraceRecord>,
    finished: Option<String>,
    samples_measured: u64,
    bytes: [u64; 2],
    loss: LossCounts,
    queue_depth: Vec<QueueSample>,
    emitted: BTreeMap<u16, f64>,
    latencies: Vec<LatencySample>,
}

fn dir_index(d: Direction) -> usize {
    match d {
        Direction::Uplink => 0,
        Direction::Downlink => 1,
    }
}

impl Engine {
    pub fn new(cfg: SimConfig) -> Result<Self, super::ConfigError> {
        cfg.validate()?;
        let invalid = |e: String| super::ConfigError::Invalid(vec![e]);
        let reg = cfg.registry();
        let axes: Vec<_> = ["pos_x", "pos_y", "depth"]
            .iter()
            .map(|n| reg.by_name(n).expect("standard registry").clone())
            .collect();
        let model = build_default_kinematic_model(&axes, cfg.dt, &cfg.compression.kinematic)
            .map_err(|e| invalid(e.to_string()))?;
        let tau = std::array::from_fn(|i| default_tau(&model, i, cfg.compression.tau_floor));
        let home = Waypoint::new(cfg.start.x, cfg.start.y, cfg.start.z);
        let env: Vec<(ChannelId, String)> = cfg
            .sensors
            .env_channels
            .iter()
            .map(|n| (reg.by_name(n).expect("validated").id, n.clone()))
            .collect();
        let setup = VehicleSetup {
            mode: cfg.mode,
            mission: cfg.mission.clone(),
            home,
            dt: cfg.dt,
            model: model.clone(),
            tau,
            env: env.iter().map(|(id, n)| (*id, cfg.compression.env[n])).collect(),
            cfg: cfg.vehicle,
        };
        let vehicle = Vehicle::new(setup).map_err(invalid)?;
        let mirror = DeadReckoner::new(
            model,
            Plan::new(cfg.mission.waypoints.clone(), cfg.mission.repeat),
            home,
            cfg.mission.speed,
            cfg.vehicle.guidance,
            cfg.dt,
        )
        .map_err(|e| invalid(e.to_string()))?;
        let center = ControlCenter::new(cfg.center, cfg.auto_policy(), mirror, cfg.dt);
        let link = if cfg.mode == OperationMode::Autonomous {
            None
        } else {
            let channel = crate::link::ChannelConfig { seed: cfg.seed, ..cfg.channel.clone() };
            Some(AcousticLink::new(channel).map_err(|e| invalid(e.to_string()))?)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(1);
        let mut disturbances = cfg.disturbances.clone();
        disturbances.sort_by(|a, b| a.t.total_cmp(&b.t));
        let cfg = SimConfig { disturbances, ..cfg };
        Ok(Self {
            truth: cfg.start,
            cfg,
            tick: 0,
            prev_velocity: [0.0; 3],
            vehicle,
            center,
            link,
            rng,
            env,
            queues: [VecDeque::new(), VecDeque::new()],
            in_flight: Vec::new(),
            tx_order: 0,
            disturbances_applied: 0,
            pending_trace: Vec::new(),
            finished: None,
            samples_measured: 0,
            bytes: [0, 0],
            loss: LossCounts::default(),
            queue_depth: Vec::new(),
            emitted: BTreeMap::new(),
            latencies: Vec::new(),
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn now(&self) -> f64 {
        self.tick as f64 * self.cfg.dt
    }

    pub fn tick_index(&self) -> u64 {
        self.tick
    }

    pub fn is_finished(&self) -> bool {
        self.finished.is_some()
    }

    pub fn truth(&self) -> Pose {
        self.truth
    }

    pub fn vehicle(&self) -> &Vehicle {
        &self.vehicle
    }

    pub fn center(&self) -> &ControlCenter {
        &self.center
    }

    pub fn vehicle_stats(&self) -> &VehicleStats {
        self.vehicle.stats()
    }

    /// Runs an operator decision through the center; the control packet joins the downlink queue.
    pub fn submit_operator(&mut self, cmd: &OperatorCommand) -> Result<u16, SubmitError> {
        if self.is_finished() || self.link.is_none() {
            return Err(SubmitError::NoActiveRun);
        }
        let out = self.center.issue_operator(cmd, self.now()).map_err(SubmitError::Field)?;
        let seq = out.controls.last().map_or(self.center.issued_seq(), |c| c.seq);
        self.enqueue_controls(&out.controls);
        self.pending_trace.extend(out.trace);
        Ok(seq)
    }

    fn enqueue_controls(&mut self, controls: &[crate::codec::ControlPacket]) {
        for c in controls {
            let frame = encode_control(c).expect("center issues valid packets");
            self.queues[1].push_back(frame);
        }
    }

    fn gaussian(&mut self, sigma: f64) -> f64 {
        let n: f64 = self.rng.sample(StandardNormal);
        sigma * n
    }

    fn env_value(&self, name: &str, now: f64) -> f64 {
        let base = self.cfg.fields[name].sample(self.truth.x, self.truth.y);
        let steps: f64 = self
            .cfg
            .injected_steps
            .iter()
            .filter(|s| s.channel == name && s.t <= now + 1e-9)
            .map(|s| s.delta)
            .sum();
        base + steps
    }

    fn sense(&mut self, now: f64) -> SensorFrame {
        let sigma = self.cfg.sensors.position_noise;
        let position = [
            self.truth.x + self.gaussian(sigma),
            self.truth.y + self.gaussian(sigma),
            self.truth.z + self.gaussian(sigma),
        ];
        let cmd = self.vehicle.motion();
        let v = velocity(self.truth.heading, &cmd);
        let accel: [f64; 3] = std::array::from_fn(|i| (v[i] - self.prev_velocity[i]) / self.cfg.dt);
        self.prev_velocity = v;
        let imu = [accel[0], accel[1], accel[2], 0.0, 0.0, cmd.turn_rate];
        let mut env = Vec::new();
        if self.tick.is_multiple_of(self.cfg.env_every()) {
            let sigma = self.cfg.sensors.env_noise;
            for i in 0..self.env.len() {
                let (id, name) = self.env[i].clone();
                let value = self.env_value(&name, now) + self.gaussian(sigma);
                env.push((id, value));
            }
        }
        SensorFrame { t: now, tick: self.tick, position, heading: self.truth.heading, imu, env }
    }

    fn take_vehicle(&mut self, out: VehicleOutput, trace: &mut Vec<TraceRecord>) {
        for r in &out.trace {
            match r.event {
                TraceEvent::PriorityTx { seq, retransmission: false, .. } => {
                    self.emitted.entry(seq).or_insert(r.t);
                }
                TraceEvent::ControlRx { ack_seq, duplicate: false, .. } => {
                    let answered: Vec<u16> = self.emitted.range(..=ack_seq).map(|(s, _)| *s).collect();
                    for seq in answered {
                        let emitted = self.emitted.remove(&seq).expect("present");
                        self.latencies.push(LatencySample { seq, emitted, answered: r.t, latency: r.t - emitted });
                    }
                }
                _ => {}
            }
        }
        if self.link.is_some() {
            for p in &out.packets {
                let frame = crate::codec::encode_data(p).expect("vehicle emits valid packets");
                self.queues[0].push_back(frame);
            }
        }
        trace.extend(out.trace);
    }

    fn deliver(&mut self, now: f64, frame: &SensorFrame, trace: &mut Vec<TraceRecord>) {
        let mut due: Vec<InFlight> = Vec::new();
        let mut i = 0;
        while i < self.in_flight.len() {
            if self.in_flight[i].event.deliver_at <= now + 1e-9 {
                due.push(self.in_flight.remove(i));
            } else {
                i += 1;
            }
        }
        due.sort_by(|a, b| a.event.deliver_at.total_cmp(&b.event.deliver_at).then(a.order.cmp(&b.order)));
        for f in due {
            let ev = f.event;
            trace.push(
                TraceRecord::new(now, Source::Link, TraceEvent::Delivered { direction: ev.direction, lost: ev.lost })
                    .with_packet(&ev.frame),
            );
            if ev.lost {
                continue;
            }
            match ev.direction {
                Direction::Downlink => match decode_control(&ev.frame) {
                    Ok(pkt) => {
                        let out = self.vehicle.handle_control(&pkt, frame);
                        self.take_vehicle(out, trace);
                    }
                    Err(e) => {
                        self.loss.decode_errors += 1;
                        trace.push(self.vehicle.drop_control(now, e.to_string()));
                    }
                },
                Direction::Uplink => match decode_data(&ev.frame) {
                    Ok(pkt) => {
                        let out = self.center.handle_uplink(&pkt, now, self.tick);
                        self.enqueue_controls(&out.controls);
                        trace.extend(out.trace);
                    }
                    Err(_) => self.loss.decode_errors += 1,
                },
            }
        }
    }

    fn transmit(&mut self, now: f64, trace: &mut Vec<TraceRecord>) {
        let Some(link) = self.link.as_mut() else { return };
        for d in [Direction::Uplink, Direction::Downlink] {
            let q = &mut self.queues[dir_index(d)];
            if q.is_empty() || !link.is_idle(d, now) {
                continue;
            }
            let frame = q.pop_front().expect("non-empty");
            let ev = link.transmit(d, frame, now).expect("idle transmitter");
            self.bytes[dir_index(d)] += PACKET_LEN as u64;
            match d {
                Direction::Uplink => {
                    self.loss.uplink_sent += 1;
                    self.loss.uplink_lost += ev.lost as u64;
                }
                Direction::Downlink => {
                    self.loss.downlink_sent += 1;
                    self.loss.downlink_lost += ev.lost as u64;
                }
            }
            let rec = TraceEvent::Transmit {
                direction: d,
                send_at: ev.send_at,
                tx_time: ev.tx_time,
                deliver_at: ev.deliver_at,
                lost: ev.lost,
            };
            trace.push(TraceRecord::new(now, Source::Link, rec).with_packet(&ev.frame));
            self.in_flight.push(InFlight { order: self.tx_order, event: ev });
            self.tx_order += 1;
        }
    }

    fn depth(&self, d: Direction, now: f64) -> usize {
        let busy = self.link.as_ref().is_some_and(|l| !l.is_idle(d, now));
        self.queues[dir_index(d)].len() + busy as usize
    }

    /// Advances the run by one tick and returns the records it produced, in order.
    pub fn step(&mut self) -> Vec<TraceRecord> {
        if self.is_finished() {
            return std::mem::take(&mut self.pending_trace);
        }
        let dt = self.cfg.dt;
        let now = self.now();
        let mut trace = std::mem::take(&mut self.pending_trace);

        if self.tick > 0 {
            self.truth = advance_kinematics(&self.truth, &self.vehicle.motion(), dt).expect("dt validated");
        }
        while let Some(d) = self.cfg.disturbances.get(self.disturbances_applied).copied() {
            if d.t > now + 1e-9 {
                break;
            }
            self.truth.x += d.dx;
            self.truth.y += d.dy;
            self.truth.z += d.dz;
            self.disturbances_applied += 1;
        }
        let frame = self.sense(now);

        if self.link.is_some() {
            self.deliver(now, &frame, &mut trace);
            let out = self.center.tick(now, self.tick);
            self.enqueue_controls(&out.controls);
            trace.extend(out.trace);
        }

        if self.vehicle.phase().is_active() {
            self.samples_measured += 7 + frame.env.len() as u64;
        }
        let out = self.vehicle.handle_tick(&frame);
        self.take_vehicle(out, &mut trace);

        self.transmit(now, &mut trace);

        let per_second = (1.0 / dt).round().max(1.0) as u64;
        if self.tick.is_multiple_of(per_second) {
            self.queue_depth.push(QueueSample {
                t: now,
                uplink: self.depth(Direction::Uplink, now),
                downlink: self.depth(Direction::Downlink, now),
            });
        }
        if !frame.env.is_empty() {
            let values = frame
                .env
                .iter()
                .map(|(id, v)| (self.env.iter().find(|(c, _)| c == id).expect("sampled").1.clone(), *v))
                .collect();
            let ev = TraceEvent::Sample {
                x: self.truth.x,
                y: self.truth.y,
                z: self.truth.z,
                heading: self.truth.heading,
                values,
                mirror: self.center.mirror_estimate().map(|(_, p)| p),
            };
            trace.push(TraceRecord::new(now, Source::Engine, ev).with_phase(self.vehicle.phase()));
        }

        let reason = if self.vehicle.phase() == VehiclePhase::Done {
            Some("done")
        } else if now + dt > self.cfg.duration() + 1e-9 {
            Some("duration")
        } else {
            None
        };
        if let Some(reason) = reason {
            self.finished = Some(reason.to_owned());
            trace.push(TraceRecord::new(now, Source::Engine, TraceEvent::RunEnd { reason: reason.to_owned() }));
        }
        self.tick += 1;
        trace
    }

    /// Steps until the run ends and returns the whole trace.
    pub fn run_to_end(&mut self) -> Vec<TraceRecord> {
        let mut trace = Vec::new();
        while !self.is_finished() {
            trace.extend(self.step());
        }
        trace
    }

    pub fn snapshot(&self) -> Snapshot {
        let now = self.now();
        Snapshot {
            t: now,
            tick: self.tick,
            mode: self.cfg.mode,
            phase: self.vehicle.phase(),
            finished: self.finished.clone(),
            t_mission: self.cfg.mission.t_mission,
            mission_start: self.vehicle.mission_start(),
            waypoints: self.cfg.mission.waypoints.clone(),
            last_checkpoint: self.center.last_checkpoint().copied(),
            reported_track: self.center.reported_track().to_vec(),
            mirror: self.center.mirror_estimate().map(|(_, p)| p),
            pending_events: self.center.pending().cloned().collect(),
            issued_seq: self.center.issued_seq(),
            ack_seq: self.center.ack_seq(),
            auto_policy: self.center.auto_enabled(),
            uplink_queue: self.queues[0].len(),
            downlink_queue: self.queues[1].len(),
        }
    }

    pub fn metrics(&self) -> MetricsReport {
        let stats = self.vehicle.stats();
        let counts = RunCounts {
            samples_measured: self.samples_measured,
            points_transmitted: stats.points_transmitted,
            bytes_uplink: self.bytes[0],
            bytes_downlink: self.bytes[1],
            checkpoints: stats.checkpoints_sent,
            priority_packets: stats.priority_packets_sent,
            retransmissions: stats.retransmissions,
            latencies: self.latencies.clone(),
            loss: self.loss,
            queue_depth: self.queue_depth.clone(),
        };
        MetricsReport::new(self.cfg.mode, self.cfg.mission.clone(), counts, self.finished.clone())
    }
}
