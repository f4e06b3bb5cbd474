//! Trace checks for the vehicle phase graph and the check-point / priority / command timeline.

use thiserror::Error;

use super::VehiclePhase;
use crate::trace::{Source, TraceEvent, TraceRecord};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConformanceError {
    #[error("t={t}: transition {from:?} -> {to:?} is not in the protocol graph")]
    IllegalTransition { t: f64, from: VehiclePhase, to: VehiclePhase },
    #[error("t={t}: phase change starts from {found:?} but the vehicle was in {expected:?}")]
    BrokenChain { t: f64, expected: VehiclePhase, found: VehiclePhase },
    #[error("t={t}: uplink while awaiting the start command")]
    UplinkBeforeStart { t: f64 },
    #[error("t={t}: first uplink is not a check-point sent after a control packet")]
    BadFirstUplink { t: f64 },
    #[error("ordering: {0}")]
    Ordering(String),
}

use VehiclePhase::*;

pub fn is_allowed_transition(from: VehiclePhase, to: VehiclePhase) -> bool {
    matches!(
        (from, to),
        (AwaitStart, OnMission)
            | (OnMission, SelfDetermined | AwaitCommandOnPath | Returning)
            | (SelfDetermined, OnMission | Returning)
            | (AwaitCommandOnPath, OnMission | SelfDetermined | Returning)
            | (Returning, Done)
    )
}

fn vehicle_records(trace: &[TraceRecord]) -> impl Iterator<Item = &TraceRecord> {
    trace.iter().filter(|r| r.source == Source::Vehicle)
}

/// Replays vehicle records against the phase graph and the start-up rules.
pub fn check_conformance(trace: &[TraceRecord]) -> Result<(), ConformanceError> {
    let mut phase = AwaitStart;
    let mut seen_control = false;
    let mut seen_uplink = false;
    for r in vehicle_records(trace) {
        match &r.event {
            TraceEvent::PhaseChange { from, to } => {
                if *from != phase {
                    return Err(ConformanceError::BrokenChain { t: r.t, expected: phase, found: *from });
                }
                if !is_allowed_transition(*from, *to) {
                    return Err(ConformanceError::IllegalTransition { t: r.t, from: *from, to: *to });
                }
                phase = *to;
            }
            TraceEvent::ControlRx { duplicate: false, .. } => seen_control = true,
            TraceEvent::CheckpointTx { .. } | TraceEvent::PriorityTx { .. } => {
                if phase == AwaitStart || r.phase == Some(AwaitStart) {
                    return Err(ConformanceError::UplinkBeforeStart { t: r.t });
                }
                if !seen_uplink && !(seen_control && matches!(r.event, TraceEvent::CheckpointTx { .. })) {
                    return Err(ConformanceError::BadFirstUplink { t: r.t });
                }
                seen_uplink = true;
            }
            _ => {}
        }
    }
    Ok(())
}

/// Checks the order control → check-point → silence → priority → covering command → back on mission.
///
/// "Silence" means only check-points go up between the first check-point and the first
/// priority packet.
pub fn check_event_ordering(trace: &[TraceRecord]) -> Result<(), ConformanceError> {
    let recs: Vec<&TraceRecord> = vehicle_records(trace).collect();
    let missing = |what: &str| ConformanceError::Ordering(format!("no {what}"));
    let start = recs
        .iter()
        .position(|r| matches!(r.event, TraceEvent::ControlRx { duplicate: false, .. }))
        .ok_or_else(|| missing("initial control packet"))?;
    let first_cp = (start..recs.len())
        .find(|&i| matches!(recs[i].event, TraceEvent::CheckpointTx { .. }))
        .ok_or_else(|| missing("check-point after the initial control packet"))?;
    let (prio, prio_seq) = (first_cp..recs.len())
        .find_map(|i| match recs[i].event {
            TraceEvent::PriorityTx { seq, retransmission: false, .. } => Some((i, seq)),
            _ => None,
        })
        .ok_or_else(|| missing("priority packet after the first check-point"))?;
    if let Some(r) = recs[start + 1..first_cp].iter().find(|r| matches!(r.event, TraceEvent::PriorityTx { .. })) {
        return Err(ConformanceError::Ordering(format!("priority packet before the first check-point at t={}", r.t)));
    }
    let command = (prio..recs.len())
        .find(|&i| matches!(recs[i].event, TraceEvent::ControlRx { duplicate: false, ack_seq, .. } if ack_seq >= prio_seq))
        .ok_or_else(|| missing("control packet acknowledging the first priority packet"))?;
    let resumed = recs[command..]
        .iter()
        .any(|r| matches!(r.event, TraceEvent::PhaseChange { to: OnMission, .. }));
    if !resumed {
        return Err(missing("return to ON_MISSION after the command"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{Command, Sensitivity};

    fn rec(t: f64, phase: VehiclePhase, event: TraceEvent) -> TraceRecord {
        TraceRecord::new(t, Source::Vehicle, event).with_phase(phase)
    }

    fn change(t: f64, from: VehiclePhase, to: VehiclePhase) -> TraceRecord {
        rec(t, to, TraceEvent::PhaseChange { from, to })
    }

    fn ctrl(t: f64, seq: u16, ack: u16) -> TraceRecord {
        rec(t, OnMission, TraceEvent::ControlRx { seq, command: Command::Continue, ack_seq: ack, duplicate: false })
    }

    fn cp(t: f64) -> TraceRecord {
        rec(t, OnMission, TraceEvent::CheckpointTx { seq: 0, x: 0.0, y: 0.0, z: 0.0, cursor: 0 })
    }

    fn prio(t: f64, seq: u16) -> TraceRecord {
        rec(t, SelfDetermined, TraceEvent::PriorityTx {
            seq,
            priority: 2,
            sensitivity: Sensitivity::Sensitive,
            records: 2,
            retransmission: false,
        })
    }

    fn happy_path() -> Vec<TraceRecord> {
        vec![
            ctrl(5.0, 1, 0),
            change(5.0, AwaitStart, OnMission),
            cp(5.0),
            cp(35.0),
            prio(40.0, 1),
            change(40.0, OnMission, SelfDetermined),
            ctrl(52.0, 2, 1),
            change(52.0, SelfDetermined, OnMission),
            change(600.0, OnMission, Returning),
            change(650.0, Returning, Done),
        ]
    }

    #[test]
    fn accepts_the_reference_timeline() {
        let t = happy_path();
        check_conformance(&t).unwrap();
        check_event_ordering(&t).unwrap();
    }

    #[test]
    fn rejects_leaving_returning() {
        let mut t = happy_path();
        t.insert(9, change(620.0, Returning, OnMission));
        assert!(matches!(check_conformance(&t), Err(ConformanceError::IllegalTransition { .. })));
    }

    #[test]
    fn rejects_uplink_before_start() {
        let t = vec![rec(0.0, AwaitStart, TraceEvent::CheckpointTx { seq: 0, x: 0.0, y: 0.0, z: 0.0, cursor: 0 })];
        assert!(matches!(check_conformance(&t), Err(ConformanceError::UplinkBeforeStart { .. })));
    }

    #[test]
    fn rejects_priority_as_first_uplink() {
        let t = vec![ctrl(5.0, 1, 0), change(5.0, AwaitStart, OnMission), prio(6.0, 1)];
        assert!(matches!(check_conformance(&t), Err(ConformanceError::BadFirstUplink { .. })));
    }

    #[test]
    fn ordering_needs_covering_ack() {
        let mut t = happy_path();
        t[6] = ctrl(52.0, 2, 0);
        assert!(check_event_ordering(&t).is_err());
    }

    #[test]
    fn graph_edges() {
        assert!(is_allowed_transition(AwaitCommandOnPath, SelfDetermined));
        assert!(!is_allowed_transition(SelfDetermined, AwaitCommandOnPath));
        assert!(!is_allowed_transition(Done, OnMission));
        assert!(!is_allowed_transition(AwaitStart, Returning));
    }
}
