use super::*;
use crate::codec::DataPayload;
use crate::compression::{build_default_kinematic_model, KinematicNoise};
use crate::telemetry::{advance_kinematics, ChannelRegistry};

const DT: f64 = 0.25;

fn setup(mode: OperationMode) -> VehicleSetup {
    let reg = ChannelRegistry::standard(1.0, DT);
    let axes: Vec<_> = ["pos_x", "pos_y", "depth"].iter().map(|n| reg.by_name(n).unwrap().clone()).collect();
    let noise = KinematicNoise { q_position: 1e-6, q_velocity: 1e-4, r: 1e-4 };
    let model = build_default_kinematic_model(&axes, DT, &noise).unwrap();
    VehicleSetup {
        mode,
        mission: Mission { t_mission: 120.0, ..Mission::default() },
        home: Waypoint::new(0.0, 0.0, 0.0),
        dt: DT,
        model,
        tau: [9e-4; 3],
        env: vec![(channels::TEMPERATURE, EnvCompressorConfig::new(8, 0.25))],
        cfg: VehicleConfig::default(),
    }
}

struct Rig {
    v: Vehicle,
    pose: Pose,
    tick: u64,
    temp: f64,
}

impl Rig {
    fn new(mode: OperationMode) -> Self {
        Self { v: Vehicle::new(setup(mode)).unwrap(), pose: Pose::default(), tick: 0, temp: 10.0 }
    }

    fn frame(&self) -> SensorFrame {
        let env = if self.tick.is_multiple_of(4) { vec![(channels::TEMPERATURE, self.temp)] } else { vec![] };
        SensorFrame {
            t: self.tick as f64 * DT,
            tick: self.tick,
            position: [self.pose.x, self.pose.y, self.pose.z],
            heading: self.pose.heading,
            imu: [0.0; 6],
            env,
        }
    }

    fn step(&mut self) -> VehicleOutput {
        let out = self.v.handle_tick(&self.frame());
        self.pose = advance_kinematics(&self.pose, &self.v.motion(), DT).unwrap();
        self.tick += 1;
        out
    }

    fn control(&mut self, command: Command, seq: u16, ack: u16) -> VehicleOutput {
        let f = self.frame();
        self.v.handle_control(&ControlPacket::new(command, seq, ack), &f)
    }

    fn run(&mut self, seconds: f64) -> Vec<VehicleOutput> {
        (0..(seconds / DT).round() as usize).map(|_| self.step()).collect()
    }
}

fn packets(outs: &[VehicleOutput]) -> Vec<DataPacket> {
    outs.iter().flat_map(|o| o.packets.clone()).collect()
}

#[test]
fn silent_until_first_control() {
    let mut rig = Rig::new(OperationMode::SemiAutonomous);
    let outs = rig.run(20.0);
    assert!(packets(&outs).is_empty());
    assert_eq!(rig.v.phase(), VehiclePhase::AwaitStart);
    assert_eq!(rig.pose, Pose::default());
}

#[test]
fn continue_starts_mission_with_checkpoint() {
    let mut rig = Rig::new(OperationMode::SemiAutonomous);
    rig.run(1.0);
    let out = rig.control(Command::Continue, 1, 0);
    assert_eq!(rig.v.phase(), VehiclePhase::OnMission);
    assert_eq!(out.packets.len(), 1);
    assert!(out.packets[0].is_checkpoint());
}

#[test]
fn checkpoint_cadence_while_predictions_hold() {
    let mut rig = Rig::new(OperationMode::SemiAutonomous);
    rig.control(Command::Continue, 1, 0);
    let outs = rig.run(100.0);
    let sent = packets(&outs);
    assert!(sent.iter().all(DataPacket::is_checkpoint), "{sent:?}");
    let times: Vec<u32> = sent
        .iter()
        .map(|p| match &p.payload {
            DataPayload::Checkpoint(c) => c.t_ds,
            _ => unreachable!(),
        })
        .collect();
    // initial check-point at t=0 came from handle_control
    assert_eq!(times, vec![300, 600, 900]);
    assert!(rig.v.stats().events == 0);
}

#[test]
fn duplicate_control_is_ignored() {
    let mut rig = Rig::new(OperationMode::SemiAutonomous);
    rig.control(Command::Continue, 1, 0);
    rig.run(5.0);
    let out = rig.control(Command::Return, 1, 0);
    assert_eq!(rig.v.phase(), VehiclePhase::OnMission);
    assert!(matches!(out.trace[0].event, TraceEvent::ControlRx { duplicate: true, .. }));
}

#[test]
fn sensitive_spike_deviates_locally() {
    let mut rig = Rig::new(OperationMode::SemiAutonomous);
    rig.control(Command::Continue, 1, 0);
    rig.run(40.0);
    let mut reference = Rig { v: rig.v.clone(), pose: rig.pose, tick: rig.tick, temp: rig.temp };
    rig.temp = 12.0;
    let outs = rig.run(20.0);
    let prio: Vec<_> = packets(&outs).into_iter().filter(|p| !p.is_checkpoint()).collect();
    assert_eq!(prio.len(), 1);
    let DataPayload::Priority(p) = &prio[0].payload else { panic!() };
    assert_eq!(p.sensitivity, Sensitivity::Sensitive);
    assert_eq!(p.records[0].value(), 12.0);
    assert_eq!(rig.v.phase(), VehiclePhase::SelfDetermined);
    reference.run(20.0);
    assert!((rig.pose.x - reference.pose.x).hypot(rig.pose.y - reference.pose.y) > 1.0);
}

#[test]
fn insensitive_event_keeps_course() {
    let mut rig = Rig::new(OperationMode::SemiAutonomous);
    rig.control(Command::Continue, 1, 0);
    rig.run(40.0);
    let mut reference = Rig { v: rig.v.clone(), pose: rig.pose, tick: rig.tick, temp: rig.temp };
    // deviation 0.8: above sqrt(T_h)=0.5, below 2·sqrt(T_h)=1.0
    rig.temp = 10.8;
    let outs = rig.run(20.0);
    reference.run(20.0);
    let prio: Vec<_> = packets(&outs).into_iter().filter(|p| !p.is_checkpoint()).collect();
    assert_eq!(prio.len(), 1);
    assert_eq!(prio[0].priority, 1);
    assert_eq!(rig.v.phase(), VehiclePhase::AwaitCommandOnPath);
    assert_eq!(rig.pose, reference.pose);
}

#[test]
fn resume_original_after_local_decision() {
    let mut rig = Rig::new(OperationMode::SemiAutonomous);
    rig.control(Command::Continue, 1, 0);
    rig.run(40.0);
    rig.temp = 12.0;
    rig.run(10.0);
    assert_eq!(rig.v.phase(), VehiclePhase::SelfDetermined);
    assert_eq!(rig.v.unacked(), 1);
    rig.control(Command::ResumeOriginal, 2, 1);
    assert_eq!(rig.v.phase(), VehiclePhase::OnMission);
    assert_eq!(rig.v.unacked(), 0);
}

#[test]
fn unacked_priority_is_resent_at_checkpoint_slot() {
    let mut rig = Rig::new(OperationMode::SemiAutonomous);
    rig.control(Command::Continue, 1, 0);
    rig.run(40.0);
    rig.temp = 10.8;
    let outs = rig.run(60.0);
    let retx = outs
        .iter()
        .flat_map(|o| &o.trace)
        .filter(|r| matches!(r.event, TraceEvent::PriorityTx { retransmission: true, .. }))
        .count();
    assert_eq!(retx, 1);
}

#[test]
fn returns_after_mission_time_and_goes_quiet() {
    let mut rig = Rig::new(OperationMode::SemiAutonomous);
    rig.control(Command::Continue, 1, 0);
    rig.run(120.25);
    assert_eq!(rig.v.phase(), VehiclePhase::OnMission);
    let outs = rig.run(200.0);
    assert!(packets(&outs).is_empty());
    assert_eq!(rig.v.phase(), VehiclePhase::Done);
    assert!(rig.pose.horizontal_distance_to(0.0, 0.0) < 1.0);
}

#[test]
fn return_command_is_absorbing() {
    let mut rig = Rig::new(OperationMode::SemiAutonomous);
    rig.control(Command::Continue, 1, 0);
    rig.run(10.0);
    rig.control(Command::Return, 2, 0);
    assert_eq!(rig.v.phase(), VehiclePhase::Returning);
    rig.control(Command::ResumeOriginal, 3, 0);
    assert_eq!(rig.v.phase(), VehiclePhase::Returning);
}

#[test]
fn new_waypoint_is_relative_to_heading() {
    let mut rig = Rig::new(OperationMode::SemiAutonomous);
    rig.control(Command::Continue, 1, 0);
    rig.pose.heading = std::f64::consts::FRAC_PI_2;
    let pkt = ControlPacket { distance_cm: 1000, angle_mdeg: -90_000, ..ControlPacket::new(Command::NewWaypoint, 2, 0) };
    let wp = relative_waypoint(&pkt, &rig.frame().pose());
    assert!((wp.x - 10.0).abs() < 1e-9 && wp.y.abs() < 1e-9);
}

#[test]
fn autonomous_never_transmits() {
    let mut rig = Rig::new(OperationMode::Autonomous);
    assert_eq!(rig.v.phase(), VehiclePhase::OnMission);
    rig.temp = 20.0;
    let outs = rig.run(60.0);
    assert!(packets(&outs).is_empty());
    assert!(rig.pose.x > 10.0);
}

#[test]
fn naive_streaming_packs_three_records() {
    let mut rig = Rig::new(OperationMode::NaiveStreaming);
    rig.control(Command::Continue, 1, 0);
    let outs = rig.run(3.0);
    let sent = packets(&outs);
    // 12 ticks × 7 kinematic + 3 temperature samples = 87 records
    assert_eq!(sent.len(), 29);
    assert!(sent.iter().all(|p| !p.is_checkpoint()));
}

#[test]
fn local_trajectory_rules() {
    let pose = Pose::new(1.0, 2.0, 3.0, 0.0);
    let mut ev = EventRecord {
        t: 0.0,
        channel: channels::TEMPERATURE,
        kind: ChannelKind::Environmental,
        sensitivity: Sensitivity::Sensitive,
        samples: vec![],
        gradient: [0.4, 0.0],
    };
    assert_eq!(decide_local_trajectory(&ev, &pose, 10.0), Waypoint::new(11.0, 2.0, 3.0));
    ev.gradient = [0.0, 0.0];
    assert_eq!(decide_local_trajectory(&ev, &pose, 10.0), Waypoint::new(1.0, 2.0, 3.0));
    ev.gradient = [1.0, 0.0];
    ev.kind = ChannelKind::Kinematic;
    assert_eq!(decide_local_trajectory(&ev, &pose, 10.0), Waypoint::new(1.0, 2.0, 3.0));
}

#[test]
fn noiseless_flight_trace_conforms() {
    let mut rig = Rig::new(OperationMode::SemiAutonomous);
    let mut trace = rig.control(Command::Continue, 1, 0).trace;
    for o in rig.run(400.0) {
        trace.extend(o.trace);
    }
    check_conformance(&trace).unwrap();
    assert_eq!(rig.v.stats().events, 0);
}
