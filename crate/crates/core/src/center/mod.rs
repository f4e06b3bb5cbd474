//! Shore side: consumes uplink packets, keeps a dead-reckoned mirror of the vehicle and
//! issues control packets from an automatic policy or an operator.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{
    encode_control, CheckpointPayload, Command, ControlPacket, DataPacket, DataPayload, PriorityPayload, Sensitivity,
};
use crate::guidance::DeadReckoner;
use crate::trace::{CommandOrigin, Source, TraceEvent, TraceRecord};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CenterConfig {
    /// Delay between an alert and the policy's command, s.
    pub think_time: f64,
    /// Distance of the investigate waypoint the policy assigns, m.
    pub investigate_distance: f64,
    /// Without the policy, unanswered events get RESUME_ORIGINAL after this long, s.
    pub operator_timeout: f64,
    /// `None` enables the policy for headless runs only.
    pub auto_policy: Option<bool>,
    /// Interval between start commands until the first check-point arrives, s.
    pub start_retry: f64,
}

impl Default for CenterConfig {
    fn default() -> Self {
        Self { think_time: 2.0, investigate_distance: 10.0, operator_timeout: 60.0, auto_policy: None, start_retry: 15.0 }
    }
}

impl CenterConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.think_time >= 0.0) {
            return Err("center.think_time must be >= 0".into());
        }
        for (name, v) in [
            ("investigate_distance", self.investigate_distance),
            ("operator_timeout", self.operator_timeout),
            ("start_retry", self.start_retry),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("center.{name} must be positive"));
            }
        }
        if self.investigate_distance * 100.0 >= i32::MAX as f64 {
            return Err("center.investigate_distance does not fit the wire format".into());
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Serialize)]
#[error("{field}: {reason}")]
pub struct FieldError {
    pub field: &'static str,
    pub reason: String,
}

fn field_err(field: &'static str, reason: impl Into<String>) -> FieldError {
    FieldError { field, reason: reason.into() }
}

/// Operator decision in engineering units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatorCommand {
    pub command: Command,
    #[serde(default)]
    pub distance_m: f64,
    /// Relative to the vehicle heading, counter-clockwise positive.
    #[serde(default)]
    pub angle_deg: f64,
    #[serde(default)]
    pub vertical_m: f64,
    /// Priority-packet sequence number this decision answers.
    #[serde(default)]
    pub event_ref: Option<u16>,
}

impl OperatorCommand {
    pub fn new(command: Command) -> Self {
        Self { command, distance_m: 0.0, angle_deg: 0.0, vertical_m: 0.0, event_ref: None }
    }

    /// Converts to wire units: `(distance_cm, angle_mdeg, vertical_cm)`.
    pub fn to_wire(&self) -> Result<(i32, i32, i32), FieldError> {
        let fixed = |field, v: f64, scale: f64| {
            let x = (v * scale).round();
            if !x.is_finite() || x <= i32::MIN as f64 || x > i32::MAX as f64 {
                return Err(field_err(field, format!("{v} is outside the wire range")));
            }
            Ok(x as i32)
        };
        let distance = fixed("distance_m", self.distance_m, 100.0)?;
        let angle = fixed("angle_deg", self.angle_deg, 1000.0)?;
        if !(-180_000 < angle && angle <= 180_000) {
            return Err(field_err("angle_deg", format!("{} is outside (-180, 180]", self.angle_deg)));
        }
        let vertical = fixed("vertical_m", self.vertical_m, 100.0)?;
        Ok((distance, angle, vertical))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingEvent {
    pub payload: PriorityPayload,
    pub received_at: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackPoint {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

#[derive(Debug, Clone, Default)]
pub struct CenterOutput {
    pub controls: Vec<ControlPacket>,
    pub trace: Vec<TraceRecord>,
}

#[derive(Debug, Clone)]
pub struct ControlCenter {
    cfg: CenterConfig,
    auto: bool,
    dt: f64,
    mirror: DeadReckoner,
    last_checkpoint: Option<(CheckpointPayload, f64)>,
    track: Vec<TrackPoint>,
    pending: VecDeque<PendingEvent>,
    resolved: BTreeMap<u16, ControlPacket>,
    received: BTreeSet<u16>,
    ack_seq: u16,
    issued_seq: u16,
    last_start_sent: Option<f64>,
}

impl ControlCenter {
    /// `mirror` must be built from the same model and plan as the vehicle's twin.
    pub fn new(cfg: CenterConfig, auto: bool, mirror: DeadReckoner, dt: f64) -> Self {
        Self {
            cfg,
            auto,
            dt,
            mirror,
            last_checkpoint: None,
            track: Vec::new(),
            pending: VecDeque::new(),
            resolved: BTreeMap::new(),
            received: BTreeSet::new(),
            ack_seq: 0,
            issued_seq: 0,
            last_start_sent: None,
        }
    }

    pub fn auto_enabled(&self) -> bool {
        self.auto
    }

    pub fn issued_seq(&self) -> u16 {
        self.issued_seq
    }

    pub fn ack_seq(&self) -> u16 {
        self.ack_seq
    }

    pub fn pending(&self) -> impl Iterator<Item = &PendingEvent> {
        self.pending.iter()
    }

    pub fn last_checkpoint(&self) -> Option<&CheckpointPayload> {
        self.last_checkpoint.as_ref().map(|(c, _)| c)
    }

    pub fn reported_track(&self) -> &[TrackPoint] {
        &self.track
    }

    /// Mirror position with the check-point it was snapped to.
    pub fn mirror_estimate(&self) -> Option<(u16, [f64; 3])> {
        Some((self.last_checkpoint?.0.seq, self.mirror.position()?))
    }

    fn record(t: f64, event: TraceEvent) -> TraceRecord {
        TraceRecord::new(t, Source::Center, event)
    }

    pub fn handle_uplink(&mut self, pkt: &DataPacket, now: f64, tick: u64) -> CenterOutput {
        let mut out = CenterOutput::default();
        match &pkt.payload {
            DataPayload::Checkpoint(cp) => {
                let stale = self.last_checkpoint.is_some_and(|(last, _)| cp.seq <= last.seq);
                out.trace.push(Self::record(now, TraceEvent::UplinkRx { seq: cp.seq, priority: 0, duplicate: stale }));
                if stale {
                    return out;
                }
                self.last_checkpoint = Some((*cp, now));
                self.track.push(TrackPoint {
                    t: cp.t_ds as f64 / 10.0,
                    x: cp.x_cm as f64 / 100.0,
                    y: cp.y_cm as f64 / 100.0,
                    z: cp.z_cm as f64 / 100.0,
                });
                let cp_tick = (cp.t_ds as f64 / (self.dt * 10.0)).round() as u64;
                self.mirror.snap(cp, cp_tick);
                let _ = self.mirror.advance_to(tick);
            }
            DataPayload::Priority(p) => {
                let duplicate = !self.received.insert(p.seq);
                out.trace.push(Self::record(now, TraceEvent::UplinkRx {
                    seq: p.seq,
                    priority: pkt.priority,
                    duplicate,
                }));
                if duplicate {
                    if let Some(prev) = self.resolved.get(&p.seq).copied() {
                        let pkt = self.issue(prev.command, (prev.distance_cm, prev.angle_mdeg, prev.vertical_cm), None, now, CommandOrigin::Reissue, &mut out);
                        self.resolved.insert(p.seq, pkt);
                    }
                    return out;
                }
                while self.received.contains(&self.ack_seq.wrapping_add(1)) {
                    self.ack_seq = self.ack_seq.wrapping_add(1);
                }
                out.trace.push(Self::record(now, TraceEvent::Alert {
                    seq: p.seq,
                    sensitivity: p.sensitivity,
                    channel: p.records.first().map_or(0, |r| r.channel),
                    values: p.records.iter().map(|r| r.value()).collect(),
                }));
                self.pending.push_back(PendingEvent { payload: p.clone(), received_at: now });
            }
        }
        out
    }

    /// The policy's answer to one event: investigate sensitive ones, resume otherwise.
    pub fn policy_decision(&self, event: &PendingEvent) -> (Command, (i32, i32, i32)) {
        match event.payload.sensitivity {
            Sensitivity::Sensitive => {
                let r = &event.payload.records;
                let falling = r.len() >= 2 && r[0].value_milli < r[1].value_milli;
                let distance = (self.cfg.investigate_distance * 100.0).round() as i32;
                (Command::NewWaypoint, (distance, if falling { 180_000 } else { 0 }, 0))
            }
            Sensitivity::Insensitive => (Command::ResumeOriginal, (0, 0, 0)),
        }
    }

    /// Next event the policy (or the operator timeout) resolves at `now`, if any.
    pub fn auto_policy(&self, now: f64) -> Option<(u16, Command, (i32, i32, i32), CommandOrigin)> {
        let head = self.pending.front()?;
        let seq = head.payload.seq;
        if self.auto {
            (now >= head.received_at + self.cfg.think_time - 1e-9).then(|| {
                let (c, f) = self.policy_decision(head);
                (seq, c, f, CommandOrigin::Policy)
            })
        } else {
            (now >= head.received_at + self.cfg.operator_timeout - 1e-9)
                .then_some((seq, Command::ResumeOriginal, (0, 0, 0), CommandOrigin::Timeout))
        }
    }

    fn issue(
        &mut self,
        command: Command,
        (distance_cm, angle_mdeg, vertical_cm): (i32, i32, i32),
        event_ref: Option<u16>,
        now: f64,
        origin: CommandOrigin,
        out: &mut CenterOutput,
    ) -> ControlPacket {
        self.issued_seq = self.issued_seq.wrapping_add(1);
        let pkt = ControlPacket { command, distance_cm, angle_mdeg, vertical_cm, seq: self.issued_seq, ack_seq: self.ack_seq };
        let bytes = encode_control(&pkt).expect("issued fields are validated");
        let ev = TraceEvent::CommandIssued {
            seq: pkt.seq,
            command,
            distance_cm,
            angle_mdeg,
            vertical_cm,
            ack_seq: pkt.ack_seq,
            origin,
            event_ref,
        };
        out.trace.push(Self::record(now, ev).with_packet(&bytes));
        out.controls.push(pkt);
        pkt
    }

    fn resolve(&mut self, command: Command, event_ref: Option<u16>, pkt: ControlPacket) {
        let taken: Vec<PendingEvent> = match (event_ref, command) {
            (Some(seq), _) => {
                let idx = self.pending.iter().position(|e| e.payload.seq == seq);
                idx.and_then(|i| self.pending.remove(i)).into_iter().collect()
            }
            (None, Command::Return | Command::Reprogram) => self.pending.drain(..).collect(),
            (None, _) => self.pending.pop_front().into_iter().collect(),
        };
        for e in taken {
            self.resolved.insert(e.payload.seq, pkt);
        }
    }

    /// Issues a control packet for a decision; the decision resolves `event_ref`, or the oldest
    /// pending event, or every pending event for RETURN and REPROGRAM.
    pub fn issue_command(
        &mut self,
        command: Command,
        fields: (i32, i32, i32),
        event_ref: Option<u16>,
        now: f64,
        origin: CommandOrigin,
    ) -> CenterOutput {
        let mut out = CenterOutput::default();
        let pkt = self.issue(command, fields, event_ref, now, origin, &mut out);
        self.resolve(command, event_ref, pkt);
        out
    }

    /// Validates and issues an operator decision.
    pub fn issue_operator(&mut self, cmd: &OperatorCommand, now: f64) -> Result<CenterOutput, FieldError> {
        let fields = cmd.to_wire()?;
        if let Some(seq) = cmd.event_ref {
            if !self.pending.iter().any(|e| e.payload.seq == seq) {
                return Err(field_err("event_ref", format!("no pending event with seq {seq}")));
            }
        }
        Ok(self.issue_command(cmd.command, fields, cmd.event_ref, now, CommandOrigin::Operator))
    }

    /// Start-up retries, mirror propagation and policy decisions for one tick.
    pub fn tick(&mut self, now: f64, tick: u64) -> CenterOutput {
        let mut out = CenterOutput::default();
        let _ = self.mirror.advance_to(tick);
        if self.last_checkpoint.is_none()
            && self.last_start_sent.is_none_or(|t| now - t >= self.cfg.start_retry - 1e-9)
        {
            self.last_start_sent = Some(now);
            let o = self.issue_command(Command::Continue, (0, 0, 0), None, now, CommandOrigin::Startup);
            out.controls.extend(o.controls);
            out.trace.extend(o.trace);
        }
        while let Some((seq, command, fields, origin)) = self.auto_policy(now) {
            let o = self.issue_command(command, fields, Some(seq), now, origin);
            out.controls.extend(o.controls);
            out.trace.extend(o.trace);
        }
        out
    }
}
