//! Bit-exact 32-byte packet layouts.
//!
//! Control packets travel shore → vehicle, data packets vehicle → shore, so neither carries
//! a kind tag. All integers are big-endian.
//!
//! Control packet:
//!
//! | bytes  | field                                   |
//! |--------|-----------------------------------------|
//! | 0      | command                                 |
//! | 1      | flags, always 0                         |
//! | 2..6   | distance, i32 centimeters               |
//! | 6..10  | angle, i32 millidegrees in (−180000, 180000] |
//! | 10..14 | vertical, i32 centimeters               |
//! | 14..16 | seq, u16                                |
//! | 16..18 | ack_seq, u16                            |
//! | 18..30 | reserved, zero                          |
//! | 30..32 | CRC-16/CCITT-FALSE over bytes 0..30     |
//!
//! Data packet: bytes 0..2 hold the priority, bytes 2..32 the payload. Priority 0 marks a
//! check-point; any other value a priority payload. Payload offsets below are relative to
//! byte 2.
//!
//! Check-point payload:
//!
//! | bytes  | field                                   |
//! |--------|-----------------------------------------|
//! | 0..2   | seq, u16                                |
//! | 2..6   | t, u32 deciseconds                      |
//! | 6..18  | x, y, z, i32 centimeters                |
//! | 18..20 | heading, i16 centidegrees in (−18000, 18000] |
//! | 20     | battery, percent ≤ 100                  |
//! | 21     | plan cursor (waypoint index, 0xFE returning, 0xFF off-plan) |
//! | 22..30 | zero                                    |
//!
//! Priority payload:
//!
//! | bytes  | field                                   |
//! |--------|-----------------------------------------|
//! | 0..2   | seq, u16                                |
//! | 2..6   | t, u32 deciseconds                      |
//! | 6      | sensitivity, 0 insensitive / 1 sensitive |
//! | 7      | record count ≤ 3                        |
//! | 8..29  | 3 × {channel u8, age u16 deciseconds, value i32 ×1000}, unused slots zero |
//! | 29     | zero                                    |

mod control;
mod crc;
mod data;

use thiserror::Error;

pub use control::{decode_control, encode_control, wrap_millidegrees, Command, ControlPacket};
pub use crc::crc16_ccitt_false;
pub use data::{
    decode_data, encode_data, CheckpointPayload, DataPacket, DataPayload, PriorityPayload, PriorityRecord,
    Sensitivity, CURSOR_OFF_PLAN, CURSOR_RETURNING, MAX_RECORDS,
};

pub const PACKET_LEN: usize = 32;
pub type Frame = [u8; PACKET_LEN];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("frame must be {PACKET_LEN} bytes, got {0}")]
    Frame(usize),
    #[error("crc mismatch: packet carries {carried:#06x}, computed {computed:#06x}")]
    Integrity { carried: u16, computed: u16 },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("cannot encode {field}: {reason}")]
    Encode { field: &'static str, reason: String },
}

pub(crate) fn encode_err(field: &'static str, reason: impl Into<String>) -> CodecError {
    CodecError::Encode { field, reason: reason.into() }
}

pub fn to_frame(bytes: &[u8]) -> Result<Frame, CodecError> {
    bytes.try_into().map_err(|_| CodecError::Frame(bytes.len()))
}

pub fn frame_to_hex(frame: &Frame) -> String {
    hex::encode(frame)
}

pub fn frame_from_hex(s: &str) -> Result<Frame, CodecError> {
    let bytes = hex::decode(s).map_err(|e| CodecError::Protocol(format!("bad hex: {e}")))?;
    to_frame(&bytes)
}
