use serde::{Deserialize, Serialize};

use super::{crc16_ccitt_false, encode_err, to_frame, CodecError, Frame, PACKET_LEN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
#[repr(u8)]
pub enum Command {
    Continue = 0,
    NewWaypoint = 1,
    Return = 2,
    ResumeOriginal = 3,
    Reprogram = 4,
}

impl Command {
    pub const ALL: [Command; 5] =
        [Command::Continue, Command::NewWaypoint, Command::Return, Command::ResumeOriginal, Command::Reprogram];

    pub fn from_byte(b: u8) -> Option<Self> {
        Self::ALL.get(b as usize).copied()
    }
}

/// Shore → vehicle command.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControlPacket {
    pub command: Command,
    /// Centimeters to travel.
    pub distance_cm: i32,
    /// Heading change, millidegrees in (−180000, 180000].
    pub angle_mdeg: i32,
    /// Depth change, centimeters.
    pub vertical_cm: i32,
    pub seq: u16,
    /// Highest contiguous priority-packet sequence number received by the center.
    pub ack_seq: u16,
}

impl ControlPacket {
    pub fn new(command: Command, seq: u16, ack_seq: u16) -> Self {
        Self { command, distance_cm: 0, angle_mdeg: 0, vertical_cm: 0, seq, ack_seq }
    }

    pub fn validate(&self) -> Result<(), CodecError> {
        if self.distance_cm == i32::MIN {
            return Err(encode_err("distance", "magnitude must be below 2^31"));
        }
        if !(-180_000 < self.angle_mdeg && self.angle_mdeg <= 180_000) {
            return Err(encode_err("angle", format!("{} outside (-180000, 180000]", self.angle_mdeg)));
        }
        Ok(())
    }
}

/// Wraps millidegrees into (−180000, 180000].
pub fn wrap_millidegrees(angle: i64) -> i32 {
    let mut a = angle.rem_euclid(360_000);
    if a > 180_000 {
        a -= 360_000;
    }
    a as i32
}

pub fn encode_control(p: &ControlPacket) -> Result<Frame, CodecError> {
    p.validate()?;
    let mut b = [0u8; PACKET_LEN];
    b[0] = p.command as u8;
    b[2..6].copy_from_slice(&p.distance_cm.to_be_bytes());
    b[6..10].copy_from_slice(&p.angle_mdeg.to_be_bytes());
    b[10..14].copy_from_slice(&p.vertical_cm.to_be_bytes());
    b[14..16].copy_from_slice(&p.seq.to_be_bytes());
    b[16..18].copy_from_slice(&p.ack_seq.to_be_bytes());
    let crc = crc16_ccitt_false(&b[..30]);
    b[30..32].copy_from_slice(&crc.to_be_bytes());
    Ok(b)
}

pub fn decode_control(bytes: &[u8]) -> Result<ControlPacket, CodecError> {
    let b = to_frame(bytes)?;
    let carried = u16::from_be_bytes([b[30], b[31]]);
    let computed = crc16_ccitt_false(&b[..30]);
    if carried != computed {
        return Err(CodecError::Integrity { carried, computed });
    }
    let command =
        Command::from_byte(b[0]).ok_or_else(|| CodecError::Protocol(format!("unknown command byte {}", b[0])))?;
    if b[1] != 0 {
        return Err(CodecError::Protocol(format!("unsupported flags {:#04x}", b[1])));
    }
    if b[18..30].iter().any(|&x| x != 0) {
        return Err(CodecError::Protocol("reserved bytes must be zero".into()));
    }
    let i32_at = |o: usize| i32::from_be_bytes([b[o], b[o + 1], b[o + 2], b[o + 3]]);
    let p = ControlPacket {
        command,
        distance_cm: i32_at(2),
        angle_mdeg: i32_at(6),
        vertical_cm: i32_at(10),
        seq: u16::from_be_bytes([b[14], b[15]]),
        ack_seq: u16::from_be_bytes([b[16], b[17]]),
    };
    p.validate().map_err(|e| CodecError::Protocol(e.to_string()))?;
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Bitwise CRC written independently of the table-driven one.
    fn reference_crc(data: &[u8]) -> u16 {
        let mut crc: u16 = 0xFFFF;
        for &byte in data {
            for i in (0..8).rev() {
                let bit = (byte >> i) & 1 == 1;
                let top = crc & 0x8000 != 0;
                crc <<= 1;
                if bit ^ top {
                    crc ^= 0x1021;
                }
            }
        }
        crc
    }

    #[test]
    fn return_packet_layout() {
        let p = ControlPacket::new(Command::Return, 1, 0);
        let b = encode_control(&p).unwrap();
        let mut expected = [0u8; 30];
        expected[0] = 0x02;
        expected[15] = 0x01;
        assert_eq!(&b[..30], &expected);
        let crc = reference_crc(&expected);
        assert_eq!(&b[30..], &crc.to_be_bytes());
        assert_eq!(decode_control(&b).unwrap(), p);
    }

    #[test]
    fn all_zero_frame_fails_integrity() {
        // CRC-16/CCITT-FALSE of 30 zero bytes is not zero.
        let crc = reference_crc(&[0u8; 30]);
        assert_ne!(crc, 0);
        assert_eq!(
            decode_control(&[0u8; 32]),
            Err(CodecError::Integrity { carried: 0, computed: crc })
        );
    }

    #[test]
    fn truncated_frame() {
        assert_eq!(decode_control(&[0u8; 31]), Err(CodecError::Frame(31)));
        assert_eq!(decode_control(&[0u8; 33]), Err(CodecError::Frame(33)));
    }

    #[test]
    fn angle_out_of_range() {
        let p = ControlPacket { angle_mdeg: 180_001, ..ControlPacket::new(Command::NewWaypoint, 1, 0) };
        assert!(matches!(encode_control(&p), Err(CodecError::Encode { field: "angle", .. })));
        let p = ControlPacket { angle_mdeg: -180_000, ..p };
        assert!(encode_control(&p).is_err());
        let p = ControlPacket { angle_mdeg: 180_000, ..p };
        assert!(encode_control(&p).is_ok());
    }

    #[test]
    fn unknown_command_byte_is_protocol_error() {
        let mut b = encode_control(&ControlPacket::new(Command::Continue, 3, 0)).unwrap();
        b[0] = 9;
        let crc = crc16_ccitt_false(&b[..30]);
        b[30..].copy_from_slice(&crc.to_be_bytes());
        assert!(matches!(decode_control(&b), Err(CodecError::Protocol(_))));
    }

    #[test]
    fn wrap() {
        assert_eq!(wrap_millidegrees(180_000), 180_000);
        assert_eq!(wrap_millidegrees(-180_000), 180_000);
        assert_eq!(wrap_millidegrees(270_000), -90_000);
        assert_eq!(wrap_millidegrees(720_001), 1);
    }

    pub(crate) fn arb_control() -> impl Strategy<Value = ControlPacket> {
        (
            prop::sample::select(Command::ALL.to_vec()),
            (i32::MIN + 1)..=i32::MAX,
            -179_999i32..=180_000,
            any::<i32>(),
            any::<u16>(),
            any::<u16>(),
        )
            .prop_map(|(command, distance_cm, angle_mdeg, vertical_cm, seq, ack_seq)| ControlPacket {
                command,
                distance_cm,
                angle_mdeg,
                vertical_cm,
                seq,
                ack_seq,
            })
    }

    proptest! {
        #[test]
        fn round_trip(p in arb_control()) {
            let b = encode_control(&p).unwrap();
            prop_assert_eq!(b.len(), 32);
            prop_assert_eq!(decode_control(&b).unwrap(), p);
        }

        #[test]
        fn single_byte_corruption_is_rejected(p in arb_control(), idx in 0usize..32, flip in 1u8..=255) {
            let mut b = encode_control(&p).unwrap();
            b[idx] ^= flip;
            let err = decode_control(&b).unwrap_err();
            let rejected = matches!(err, CodecError::Integrity { .. } | CodecError::Protocol(_));
            prop_assert!(rejected);
        }

        #[test]
        fn accepted_frames_are_canonical(mut raw in prop::array::uniform32(any::<u8>())) {
            // Bias towards frames that pass the structural checks.
            raw[0] %= 6;
            raw[1] = 0;
            raw[18..30].fill(0);
            let crc = crc16_ccitt_false(&raw[..30]);
            raw[30..].copy_from_slice(&crc.to_be_bytes());
            if let Ok(p) = decode_control(&raw) {
                prop_assert_eq!(encode_control(&p).unwrap(), raw);
            }
        }
    }
}
