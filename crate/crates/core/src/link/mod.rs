//! Simulated half-duplex acoustic channel with modem timing and SINR-driven packet loss.

mod nmea;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::Frame;

pub use nmea::{nmea_checksum, parse_nmea_tx, to_nmea_tx, NmeaTx};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinkError {
    #[error("payload of {payload} bytes exceeds type {type_id} capacity of {capacity} bytes")]
    Capacity { type_id: u8, payload: usize, capacity: usize },
    #[error("{direction:?} link busy until {busy_until}")]
    Busy { direction: Direction, busy_until: f64 },
    #[error("unknown packet type {0}")]
    UnknownType(u8),
    #[error("invalid channel configuration: {0}")]
    InvalidConfig(String),
    #[error("nmea: {0}")]
    Nmea(String),
}

/// Modem packet type: frame geometry, bit rate and per-transmission cycle overhead.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PacketTypeSpec {
    pub type_id: u8,
    pub frame_bytes: usize,
    pub max_frames: usize,
    pub rate_bps: f64,
    /// Seconds added to every transmission.
    pub cycle_overhead: f64,
}

impl PacketTypeSpec {
    /// Types 0, 2, 3 and 5 of a typical 5 kHz acoustic micro-modem.
    pub fn defaults() -> Vec<Self> {
        let t = |type_id, frame_bytes, max_frames, rate_bps| Self {
            type_id,
            frame_bytes,
            max_frames,
            rate_bps,
            cycle_overhead: 1.0,
        };
        vec![t(0, 32, 1, 80.0), t(2, 64, 3, 500.0), t(3, 256, 2, 1223.0), t(5, 256, 8, 5388.0)]
    }

    pub fn capacity(&self) -> usize {
        self.frame_bytes * self.max_frames
    }

    pub fn validate(&self) -> Result<(), LinkError> {
        if !(self.rate_bps > 0.0) {
            return Err(LinkError::InvalidConfig(format!("type {} rate must be positive", self.type_id)));
        }
        if self.frame_bytes < 32 || self.max_frames == 0 {
            return Err(LinkError::InvalidConfig(format!("type {} must carry a 32-byte frame", self.type_id)));
        }
        if !(self.cycle_overhead >= 0.0) {
            return Err(LinkError::InvalidConfig(format!("type {} overhead must be >= 0", self.type_id)));
        }
        Ok(())
    }
}

/// Logistic packet-loss curve over SINR in dB.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossCurve {
    pub midpoint_db: f64,
    pub steepness: f64,
    /// Residual loss at high SINR, in [0, 1).
    pub floor: f64,
}

impl LossCurve {
    pub fn probability(&self, sinr_db: f64) -> f64 {
        self.floor + (1.0 - self.floor) / (1.0 + (self.steepness * (sinr_db - self.midpoint_db)).exp())
    }
}

fn default_loss_curves() -> BTreeMap<u8, LossCurve> {
    [(0, -5.0), (2, 0.0), (3, 3.0), (5, 6.0)]
        .into_iter()
        .map(|(id, midpoint_db)| (id, LossCurve { midpoint_db, steepness: 1.0, floor: 0.0 }))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelConfig {
    /// Meters between vehicle and center.
    pub distance: f64,
    /// m/s.
    pub sound_speed: f64,
    pub sinr_db: f64,
    /// Packet type used in both directions.
    pub packet_type: u8,
    pub types: Vec<PacketTypeSpec>,
    pub loss_curves: BTreeMap<u8, LossCurve>,
    pub seed: u64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            distance: 1500.0,
            sound_speed: 1500.0,
            sinr_db: 20.0,
            packet_type: 0,
            types: PacketTypeSpec::defaults(),
            loss_curves: default_loss_curves(),
            seed: 0,
        }
    }
}

/// SINR grid used to check that type 0 is never lossier than any other type.
pub const SINR_SWEEP_DB: (f64, f64, f64) = (-40.0, 60.0, 0.25);

impl ChannelConfig {
    pub fn spec(&self, type_id: u8) -> Result<&PacketTypeSpec, LinkError> {
        self.types.iter().find(|t| t.type_id == type_id).ok_or(LinkError::UnknownType(type_id))
    }

    pub fn selected_spec(&self) -> Result<&PacketTypeSpec, LinkError> {
        self.spec(self.packet_type)
    }

    pub fn validate(&self) -> Result<(), LinkError> {
        let bad = |m: String| Err(LinkError::InvalidConfig(m));
        if !(self.distance >= 0.0) {
            return bad("distance must be >= 0".into());
        }
        if !(self.sound_speed > 0.0) {
            return bad("sound_speed must be positive".into());
        }
        if !self.sinr_db.is_finite() && self.sinr_db != f64::INFINITY {
            return bad("sinr_db must be a number".into());
        }
        for t in &self.types {
            t.validate()?;
            let Some(curve) = self.loss_curves.get(&t.type_id) else {
                return bad(format!("no loss curve for type {}", t.type_id));
            };
            if !(0.0..1.0).contains(&curve.floor) {
                return bad(format!("type {} loss floor must be in [0, 1)", t.type_id));
            }
        }
        self.selected_spec()?;
        if let Some(robust) = self.loss_curves.get(&0) {
            let (lo, hi, step) = SINR_SWEEP_DB;
            let steps = ((hi - lo) / step).round() as usize;
            for i in 0..=steps {
                let s = lo + step * i as f64;
                let p0 = robust.probability(s);
                for (id, curve) in &self.loss_curves {
                    if curve.probability(s) < p0 {
                        return bad(format!("type 0 loses more than type {id} at {s} dB"));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Airtime for one packet: whole frames at the type's rate plus the cycle overhead.
/// Every transmission occupies at least one frame.
pub fn tx_time(spec: &PacketTypeSpec, payload_bytes: usize) -> Result<f64, LinkError> {
    if payload_bytes > spec.capacity() {
        return Err(LinkError::Capacity { type_id: spec.type_id, payload: payload_bytes, capacity: spec.capacity() });
    }
    let frames = payload_bytes.div_ceil(spec.frame_bytes).max(1);
    Ok((frames * spec.frame_bytes * 8) as f64 / spec.rate_bps + spec.cycle_overhead)
}

pub fn propagation_delay(cfg: &ChannelConfig) -> f64 {
    cfg.distance / cfg.sound_speed
}

pub fn loss_probability(cfg: &ChannelConfig, spec: &PacketTypeSpec) -> f64 {
    cfg.loss_curves.get(&spec.type_id).map_or(1.0, |c| c.probability(cfg.sinr_db))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Vehicle → center.
    Uplink,
    /// Center → vehicle.
    Downlink,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeliveryEvent {
    pub direction: Direction,
    pub send_at: f64,
    pub tx_time: f64,
    pub deliver_at: f64,
    pub lost: bool,
    #[serde(skip)]
    pub frame: Frame,
}

#[derive(Debug, Clone, Copy, Default)]
struct DirectionState {
    busy_until: f64,
    last_deliver_at: f64,
}

/// Stateful channel; one transmitter per direction.
#[derive(Debug, Clone)]
pub struct AcousticLink {
    cfg: ChannelConfig,
    spec: PacketTypeSpec,
    rng: ChaCha8Rng,
    up: DirectionState,
    down: DirectionState,
}

impl AcousticLink {
    pub fn new(cfg: ChannelConfig) -> Result<Self, LinkError> {
        cfg.validate()?;
        let spec = *cfg.selected_spec()?;
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Ok(Self { cfg, spec, rng, up: DirectionState::default(), down: DirectionState::default() })
    }

    pub fn config(&self) -> &ChannelConfig {
        &self.cfg
    }

    pub fn spec(&self) -> &PacketTypeSpec {
        &self.spec
    }

    fn state(&mut self, d: Direction) -> &mut DirectionState {
        match d {
            Direction::Uplink => &mut self.up,
            Direction::Downlink => &mut self.down,
        }
    }

    pub fn is_idle(&self, d: Direction, now: f64) -> bool {
        let s = match d {
            Direction::Uplink => &self.up,
            Direction::Downlink => &self.down,
        };
        now >= s.busy_until
    }

    /// Starts transmitting `frame` at `now`. Fails with [`LinkError::Busy`] while the
    /// direction's transmitter is still on air.
    pub fn transmit(&mut self, direction: Direction, frame: Frame, now: f64) -> Result<DeliveryEvent, LinkError> {
        let busy_until = self.state(direction).busy_until;
        if now < busy_until {
            return Err(LinkError::Busy { direction, busy_until });
        }
        let tx = tx_time(&self.spec, frame.len())?;
        let delay = propagation_delay(&self.cfg);
        let p_loss = loss_probability(&self.cfg, &self.spec);
        let lost = self.rng.random::<f64>() < p_loss;
        let state = self.state(direction);
        let deliver_at = (now + tx + delay).max(state.last_deliver_at);
        state.busy_until = now + tx;
        state.last_deliver_at = deliver_at;
        Ok(DeliveryEvent { direction, send_at: now, tx_time: tx, deliver_at, lost, frame })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec(id: u8) -> PacketTypeSpec {
        *ChannelConfig::default().spec(id).unwrap()
    }

    #[test]
    fn type0_single_frame_time() {
        assert!((tx_time(&spec(0), 32).unwrap() - 4.2).abs() < 1e-12);
    }

    #[test]
    fn type2_pads_to_one_frame() {
        assert!((tx_time(&spec(2), 32).unwrap() - (512.0 / 500.0 + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn empty_payload_still_costs_a_frame() {
        assert_eq!(tx_time(&spec(0), 0).unwrap(), tx_time(&spec(0), 32).unwrap());
    }

    #[test]
    fn capacity_error() {
        assert!(matches!(tx_time(&spec(0), 33), Err(LinkError::Capacity { .. })));
        assert!(tx_time(&spec(5), 2048).is_ok());
    }

    #[test]
    fn default_ratios_between_types() {
        let (t2, t3) = (spec(2), spec(3));
        assert_eq!(t3.frame_bytes, 4 * t2.frame_bytes);
        assert!((t3.rate_bps / t2.rate_bps - 2.4).abs() < 0.05);
        let all = PacketTypeSpec::defaults();
        assert!(all.iter().all(|t| t.rate_bps >= spec(0).rate_bps));
        assert!(all.iter().all(|t| t.rate_bps <= spec(5).rate_bps));
    }

    #[test]
    fn propagation() {
        let mut cfg = ChannelConfig::default();
        assert_eq!(propagation_delay(&cfg), 1.0);
        cfg.distance = 0.0;
        assert_eq!(propagation_delay(&cfg), 0.0);
        cfg.distance = 750.0;
        assert_eq!(propagation_delay(&cfg), 0.5);
    }

    #[test]
    fn logistic_limits() {
        let c = LossCurve { midpoint_db: 3.0, steepness: 0.8, floor: 0.1 };
        assert!((c.probability(1e6) - 0.1).abs() < 1e-12);
        assert!((c.probability(3.0) - (0.1 + 0.9 / 2.0)).abs() < 1e-12);
    }

    #[test]
    fn type0_most_robust_at_zero_db() {
        let mut cfg = ChannelConfig { sinr_db: 0.0, ..ChannelConfig::default() };
        let p0 = loss_probability(&cfg, &spec(0));
        let p5 = loss_probability(&cfg, &spec(5));
        assert!(p0 <= p5, "{p0} {p5}");
        cfg.loss_curves.get_mut(&0).unwrap().midpoint_db = 10.0;
        assert!(matches!(cfg.validate(), Err(LinkError::InvalidConfig(_))));
    }

    #[test]
    fn lossless_when_floor_zero_and_sinr_infinite() {
        let cfg = ChannelConfig { sinr_db: f64::INFINITY, seed: 9, ..ChannelConfig::default() };
        let mut link = AcousticLink::new(cfg).unwrap();
        for i in 0..200 {
            let ev = link.transmit(Direction::Uplink, [0; 32], i as f64 * 10.0).unwrap();
            assert!(!ev.lost);
        }
    }

    #[test]
    fn busy_until_airtime_ends() {
        let mut link = AcousticLink::new(ChannelConfig::default()).unwrap();
        let a = link.transmit(Direction::Uplink, [1; 32], 0.0).unwrap();
        assert!(matches!(link.transmit(Direction::Uplink, [2; 32], 4.0), Err(LinkError::Busy { .. })));
        // the other direction is independent
        assert!(link.transmit(Direction::Downlink, [3; 32], 1.0).is_ok());
        let b = link.transmit(Direction::Uplink, [2; 32], a.send_at + a.tx_time).unwrap();
        assert!(b.deliver_at > a.deliver_at);
        assert!((a.deliver_at - a.send_at - a.tx_time - 1.0).abs() < 1e-9);
    }

    #[test]
    fn seeded_losses_repeat() {
        let cfg = ChannelConfig { sinr_db: 6.0, packet_type: 5, seed: 42, ..ChannelConfig::default() };
        let run = || {
            let mut link = AcousticLink::new(cfg.clone()).unwrap();
            (0..100).map(|i| link.transmit(Direction::Uplink, [0; 32], i as f64 * 5.0).unwrap().lost).collect::<Vec<_>>()
        };
        let a = run();
        assert_eq!(a, run());
        assert!(a.iter().any(|&l| l) && a.iter().any(|&l| !l));
    }

    proptest! {
        #[test]
        fn type0_never_lossier(sinr in -60.0f64..80.0) {
            let cfg = ChannelConfig { sinr_db: sinr, ..ChannelConfig::default() };
            let p0 = loss_probability(&cfg, &spec(0));
            for t in PacketTypeSpec::defaults() {
                prop_assert!(p0 <= loss_probability(&cfg, &t));
            }
        }

        #[test]
        fn delivery_never_beats_propagation(gaps in prop::collection::vec(0.0f64..20.0, 1..40), dist in 0.0f64..5000.0) {
            let cfg = ChannelConfig { distance: dist, ..ChannelConfig::default() };
            let delay = propagation_delay(&cfg);
            let mut link = AcousticLink::new(cfg).unwrap();
            let mut now = 0.0;
            let mut last = f64::NEG_INFINITY;
            for g in gaps {
                now += g;
                if let Ok(ev) = link.transmit(Direction::Uplink, [0; 32], now) {
                    prop_assert!(ev.deliver_at - ev.send_at > delay);
                    prop_assert!(ev.deliver_at > last);
                    last = ev.deliver_at;
                }
            }
        }
    }
}
