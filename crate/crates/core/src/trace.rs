//! JSON-lines trace records emitted by the agents and the engine.

use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::codec::{Command, Sensitivity};
use crate::link::Direction;
use crate::telemetry::ChannelKind;
use crate::vehicle::VehiclePhase;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Vehicle,
    Center,
    Link,
    Engine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommandOrigin {
    Startup,
    Policy,
    Operator,
    Timeout,
    Reissue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceEvent {
    PhaseChange {
        from: VehiclePhase,
        to: VehiclePhase,
    },
    CheckpointTx {
        seq: u16,
        x: f64,
        y: f64,
        z: f64,
        cursor: u8,
    },
    PriorityTx {
        seq: u16,
        priority: u16,
        sensitivity: Sensitivity,
        records: usize,
        retransmission: bool,
    },
    EventDetected {
        channel: u8,
        kind: ChannelKind,
        sensitivity: Sensitivity,
        deviation: f64,
    },
    EventClosed {
        channel: u8,
        start: usize,
        end: usize,
    },
    LocalTrajectory {
        x: f64,
        y: f64,
        z: f64,
    },
    ControlRx {
        seq: u16,
        command: Command,
        ack_seq: u16,
        duplicate: bool,
    },
    ControlDropped {
        reason: String,
    },
    Transmit {
        direction: Direction,
        send_at: f64,
        tx_time: f64,
        deliver_at: f64,
        lost: bool,
    },
    Delivered {
        direction: Direction,
        lost: bool,
    },
    UplinkRx {
        seq: u16,
        priority: u16,
        duplicate: bool,
    },
    Alert {
        seq: u16,
        sensitivity: Sensitivity,
        channel: u8,
        values: Vec<f64>,
    },
    CommandIssued {
        seq: u16,
        command: Command,
        distance_cm: i32,
        angle_mdeg: i32,
        vertical_cm: i32,
        ack_seq: u16,
        origin: CommandOrigin,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        event_ref: Option<u16>,
    },
    Sample {
        x: f64,
        y: f64,
        z: f64,
        heading: f64,
        values: BTreeMap<String, f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mirror: Option<[f64; 3]>,
    },
    RunEnd {
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: f64,
    pub source: Source,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase: Option<VehiclePhase>,
    #[serde(flatten)]
    pub event: TraceEvent,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub packet_hex: Option<String>,
}

impl TraceRecord {
    pub fn new(t: f64, source: Source, event: TraceEvent) -> Self {
        Self { t, source, phase: None, event, packet_hex: None }
    }

    pub fn with_phase(mut self, phase: VehiclePhase) -> Self {
        self.phase = Some(phase);
        self
    }

    pub fn with_packet(mut self, frame: &crate::codec::Frame) -> Self {
        self.packet_hex = Some(crate::codec::frame_to_hex(frame));
        self
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("trace records always serialize")
    }
}

pub fn write_trace<W: Write>(mut w: W, records: &[TraceRecord]) -> io::Result<()> {
    for r in records {
        writeln!(w, "{}", r.to_json_line())?;
    }
    Ok(())
}

/// Parses a JSON-lines trace; blank lines are skipped. Errors carry the 1-based line number.
pub fn read_trace<R: BufRead>(r: R) -> Result<Vec<TraceRecord>, (usize, String)> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| (i + 1, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| (i + 1, e.to_string()))?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_line_round_trip() {
        let rec = TraceRecord::new(
            1.25,
            Source::Vehicle,
            TraceEvent::PhaseChange { from: VehiclePhase::AwaitStart, to: VehiclePhase::OnMission },
        )
        .with_phase(VehiclePhase::OnMission)
        .with_packet(&[7u8; 32]);
        let line = rec.to_json_line();
        assert!(line.contains("\"event\":\"phase_change\""));
        assert!(line.contains("\"ON_MISSION\""));
        let back = read_trace(line.as_bytes()).unwrap();
        assert_eq!(back, vec![rec]);
    }

    #[test]
    fn bad_line_reports_number() {
        let text = "\n{\"t\":0}\n";
        assert_eq!(read_trace(text.as_bytes()).unwrap_err().0, 2);
    }
}
