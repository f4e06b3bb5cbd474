use serde::{Deserialize, Serialize};

use super::{encode_err, to_frame, CodecError, Frame, PACKET_LEN};

pub const MAX_RECORDS: usize = 3;
const RECORD_LEN: usize = 7;
const PAYLOAD_OFFSET: usize = 2;

/// Plan cursor value while returning to the start point.
pub const CURSOR_RETURNING: u8 = 0xFE;
/// Plan cursor value while following a target outside the original plan.
pub const CURSOR_OFF_PLAN: u8 = 0xFF;

/// Periodic pose report sent while predictions hold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointPayload {
    pub seq: u16,
    /// Deciseconds since the start of the run.
    pub t_ds: u32,
    pub x_cm: i32,
    pub y_cm: i32,
    pub z_cm: i32,
    /// Centidegrees in (−18000, 18000].
    pub heading_cdeg: i16,
    /// Percent, ≤ 100.
    pub battery: u8,
    /// Index of the waypoint being followed, or [`CURSOR_RETURNING`] / [`CURSOR_OFF_PLAN`].
    pub cursor: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum Sensitivity {
    Insensitive = 0,
    Sensitive = 1,
}

/// One sensor reading inside a priority payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PriorityRecord {
    pub channel: u8,
    /// Age relative to the payload timestamp, deciseconds.
    pub age_ds: u16,
    /// Fixed point, value × 1000.
    pub value_milli: i32,
}

impl PriorityRecord {
    pub fn from_value(channel: u8, age_ds: u16, value: f64) -> Result<Self, CodecError> {
        let scaled = (value * 1000.0).round();
        if !scaled.is_finite() || scaled < i32::MIN as f64 || scaled > i32::MAX as f64 {
            return Err(encode_err("value", format!("{value} does not fit i32 x1000")));
        }
        Ok(Self { channel, age_ds, value_milli: scaled as i32 })
    }

    pub fn value(&self) -> f64 {
        self.value_milli as f64 / 1000.0
    }
}

/// Unpredicted sensor data with its delay sensitivity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PriorityPayload {
    pub seq: u16,
    pub t_ds: u32,
    pub sensitivity: Sensitivity,
    /// At most [`MAX_RECORDS`].
    pub records: Vec<PriorityRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataPayload {
    Checkpoint(CheckpointPayload),
    Priority(PriorityPayload),
}

/// Vehicle → shore packet: 2-byte priority plus 30-byte payload.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataPacket {
    /// 0 marks a check-point.
    pub priority: u16,
    pub payload: DataPayload,
}

impl DataPacket {
    pub fn checkpoint(p: CheckpointPayload) -> Self {
        Self { priority: 0, payload: DataPayload::Checkpoint(p) }
    }

    pub fn priority(priority: u16, p: PriorityPayload) -> Self {
        Self { priority, payload: DataPayload::Priority(p) }
    }

    pub fn is_checkpoint(&self) -> bool {
        self.priority == 0
    }

    pub fn seq(&self) -> u16 {
        match &self.payload {
            DataPayload::Checkpoint(c) => c.seq,
            DataPayload::Priority(p) => p.seq,
        }
    }
}

pub fn encode_data(p: &DataPacket) -> Result<Frame, CodecError> {
    let mut b = [0u8; PACKET_LEN];
    b[..2].copy_from_slice(&p.priority.to_be_bytes());
    let out = &mut b[PAYLOAD_OFFSET..];
    match (&p.payload, p.priority) {
        (DataPayload::Checkpoint(c), 0) => {
            if c.battery > 100 {
                return Err(encode_err("battery", format!("{} > 100", c.battery)));
            }
            if !(-18_000 < c.heading_cdeg && c.heading_cdeg <= 18_000) {
                return Err(encode_err("heading", format!("{} outside (-18000, 18000]", c.heading_cdeg)));
            }
            out[0..2].copy_from_slice(&c.seq.to_be_bytes());
            out[2..6].copy_from_slice(&c.t_ds.to_be_bytes());
            out[6..10].copy_from_slice(&c.x_cm.to_be_bytes());
            out[10..14].copy_from_slice(&c.y_cm.to_be_bytes());
            out[14..18].copy_from_slice(&c.z_cm.to_be_bytes());
            out[18..20].copy_from_slice(&c.heading_cdeg.to_be_bytes());
            out[20] = c.battery;
            out[21] = c.cursor;
        }
        (DataPayload::Priority(pp), prio) if prio != 0 => {
            if pp.records.len() > MAX_RECORDS {
                return Err(encode_err("count", format!("{} records > {MAX_RECORDS}", pp.records.len())));
            }
            out[0..2].copy_from_slice(&pp.seq.to_be_bytes());
            out[2..6].copy_from_slice(&pp.t_ds.to_be_bytes());
            out[6] = pp.sensitivity as u8;
            out[7] = pp.records.len() as u8;
            for (i, r) in pp.records.iter().enumerate() {
                let o = 8 + i * RECORD_LEN;
                out[o] = r.channel;
                out[o + 1..o + 3].copy_from_slice(&r.age_ds.to_be_bytes());
                out[o + 3..o + 7].copy_from_slice(&r.value_milli.to_be_bytes());
            }
        }
        (DataPayload::Checkpoint(_), _) => {
            return Err(encode_err("priority", "check-point payload requires priority 0"));
        }
        (DataPayload::Priority(_), _) => {
            return Err(encode_err("priority", "priority 0 is reserved for check-points"));
        }
    }
    Ok(b)
}

pub fn decode_data(bytes: &[u8]) -> Result<DataPacket, CodecError> {
    let b = to_frame(bytes)?;
    let priority = u16::from_be_bytes([b[0], b[1]]);
    let p = &b[PAYLOAD_OFFSET..];
    let u16_at = |o: usize| u16::from_be_bytes([p[o], p[o + 1]]);
    let u32_at = |o: usize| u32::from_be_bytes([p[o], p[o + 1], p[o + 2], p[o + 3]]);
    let i32_at = |o: usize| i32::from_be_bytes([p[o], p[o + 1], p[o + 2], p[o + 3]]);
    let protocol = |m: String| Err(CodecError::Protocol(m));

    if priority == 0 {
        let c = CheckpointPayload {
            seq: u16_at(0),
            t_ds: u32_at(2),
            x_cm: i32_at(6),
            y_cm: i32_at(10),
            z_cm: i32_at(14),
            heading_cdeg: i16::from_be_bytes([p[18], p[19]]),
            battery: p[20],
            cursor: p[21],
        };
        if c.battery > 100 {
            return protocol(format!("battery {} > 100", c.battery));
        }
        if !(-18_000 < c.heading_cdeg && c.heading_cdeg <= 18_000) {
            return protocol(format!("heading {} out of range", c.heading_cdeg));
        }
        if p[22..].iter().any(|&x| x != 0) {
            return protocol("check-point padding must be zero".into());
        }
        return Ok(DataPacket::checkpoint(c));
    }

    let sensitivity = match p[6] {
        0 => Sensitivity::Insensitive,
        1 => Sensitivity::Sensitive,
        other => return protocol(format!("sensitivity byte {other}")),
    };
    let count = p[7] as usize;
    if count > MAX_RECORDS {
        return protocol(format!("record count {count} > {MAX_RECORDS}"));
    }
    let unused = 8 + count * RECORD_LEN;
    if p[unused..].iter().any(|&x| x != 0) {
        return protocol("unused record slots must be zero".into());
    }
    let records = (0..count)
        .map(|i| {
            let o = 8 + i * RECORD_LEN;
            PriorityRecord { channel: p[o], age_ds: u16_at(o + 1), value_milli: i32_at(o + 3) }
        })
        .collect();
    Ok(DataPacket::priority(priority, PriorityPayload { seq: u16_at(0), t_ds: u32_at(2), sensitivity, records }))
}
