use serde::{Deserialize, Serialize};

use crate::codec::{MAX_RECORDS, PACKET_LEN};
use crate::telemetry::Mission;
use crate::vehicle::OperationMode;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueueSample {
    pub t: f64,
    /// Frames waiting plus the one on air.
    pub uplink: usize,
    pub downlink: usize,
}

/// Time from a priority packet's first transmission to the first control packet acknowledging it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencySample {
    pub seq: u16,
    pub emitted: f64,
    pub answered: f64,
    pub latency: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossCounts {
    pub uplink_sent: u64,
    pub uplink_lost: u64,
    pub downlink_sent: u64,
    pub downlink_lost: u64,
    pub decode_errors: u64,
}

/// Raw counters collected by the engine.
#[derive(Debug, Clone, Default)]
pub struct RunCounts {
    pub samples_measured: u64,
    pub points_transmitted: u64,
    pub bytes_uplink: u64,
    pub bytes_downlink: u64,
    pub checkpoints: u64,
    pub priority_packets: u64,
    pub retransmissions: u64,
    pub latencies: Vec<LatencySample>,
    pub loss: LossCounts,
    pub queue_depth: Vec<QueueSample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mode: OperationMode,
    pub mission: Mission,
    pub samples_measured: u64,
    pub points_transmitted: u64,
    pub compression_ratio: f64,
    /// Uplink bytes put on air, retransmissions included.
    pub bytes_sent: u64,
    pub bytes_downlink: u64,
    pub bytes_baseline: u64,
    pub bytes_saved_fraction: f64,
    pub checkpoints: u64,
    pub priority_packets: u64,
    pub retransmissions: u64,
    pub latencies: Vec<LatencySample>,
    pub loss: LossCounts,
    pub queue_depth: Vec<QueueSample>,
    pub end_reason: Option<String>,
}

/// Bytes needed to send every sample, three records to a 32-byte packet.
pub fn baseline_bytes(samples: u64) -> u64 {
    samples.div_ceil(MAX_RECORDS as u64) * PACKET_LEN as u64
}

impl MetricsReport {
    pub fn new(mode: OperationMode, mission: Mission, c: RunCounts, end_reason: Option<String>) -> Self {
        let bytes_baseline = baseline_bytes(c.samples_measured);
        let compression_ratio = if c.samples_measured == 0 {
            0.0
        } else {
            (c.points_transmitted as f64 / c.samples_measured as f64).min(1.0)
        };
        let bytes_saved_fraction =
            if bytes_baseline == 0 { 0.0 } else { 1.0 - c.bytes_uplink as f64 / bytes_baseline as f64 };
        Self {
            mode,
            mission,
            samples_measured: c.samples_measured,
            points_transmitted: c.points_transmitted,
            compression_ratio,
            bytes_sent: c.bytes_uplink,
            bytes_downlink: c.bytes_downlink,
            bytes_baseline,
            bytes_saved_fraction,
            checkpoints: c.checkpoints,
            priority_packets: c.priority_packets,
            retransmissions: c.retransmissions,
            latencies: c.latencies,
            loss: c.loss,
            queue_depth: c.queue_depth,
            end_reason,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize")
    }
}
