use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::BufReader;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::config::SimConfig;
use super::engine::Engine;
use super::metrics::MetricsReport;
use super::ConfigError;
use crate::compression::{
    build_default_kinematic_model, classify, default_tau, env_flag_samples, kf_predict, kf_update, FilterState,
    Predictability, Residual,
};
use crate::matrix::Matrix;
use crate::telemetry::{ChannelKind, ChannelRegistry};
use crate::trace::{read_trace, write_trace, TraceEvent, TraceRecord};
use crate::vehicle::{check_conformance, check_event_ordering};
use crate::TelemetrySample;

pub const TRACE_FILE: &str = "trace.jsonl";
pub const METRICS_FILE: &str = "metrics.json";

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot write {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Error, PartialEq)]
pub enum CompareError {
    #[error("runs used different missions")]
    MissionMismatch,
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
}

fn io_err(path: &Path, e: impl ToString) -> String {
    format!("{}: {}", path.display(), e.to_string())
}

pub struct RunOutput {
    pub metrics: MetricsReport,
    pub trace: Vec<TraceRecord>,
}

/// Runs a headless simulation to completion; writes the trace and metrics when `out_dir` is given.
pub fn run(cfg: SimConfig, out_dir: Option<&Path>) -> Result<RunOutput, RunError> {
    let mut engine = Engine::new(cfg)?;
    let trace = engine.run_to_end();
    let metrics = engine.metrics();
    if let Some(dir) = out_dir {
        write_run(dir, &trace, &metrics)?;
    }
    Ok(RunOutput { metrics, trace })
}

pub fn write_run(dir: &Path, trace: &[TraceRecord], metrics: &MetricsReport) -> Result<(), RunError> {
    let io = |path: &Path, e: std::io::Error| RunError::Io { path: path.display().to_string(), message: e.to_string() };
    fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let tp = dir.join(TRACE_FILE);
    let file = fs::File::create(&tp).map_err(|e| io(&tp, e))?;
    write_trace(std::io::BufWriter::new(file), trace).map_err(|e| io(&tp, e))?;
    let mp = dir.join(METRICS_FILE);
    fs::write(&mp, metrics.to_json()).map_err(|e| io(&mp, e))?;
    Ok(())
}

pub fn load_trace(path: &Path) -> Result<Vec<TraceRecord>, String> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    read_trace(BufReader::new(file)).map_err(|(line, e)| format!("{} line {line}: {e}", path.display()))
}

/// Grid-binned means of one sampled channel, `x,y,mean` with cell centers, row-major by x then y.
pub fn export_heatmap(trace: &[TraceRecord], cell: f64, channel: &str) -> String {
    let mut bins: BTreeMap<(i64, i64), (f64, u64)> = BTreeMap::new();
    for r in trace {
        if let TraceEvent::Sample { x, y, values, .. } = &r.event {
            if let Some(v) = values.get(channel) {
                let key = ((x / cell).floor() as i64, (y / cell).floor() as i64);
                let e = bins.entry(key).or_insert((0.0, 0));
                e.0 += v;
                e.1 += 1;
            }
        }
    }
    let mut out = String::from("x,y,mean\n");
    for ((ix, iy), (sum, n)) in bins {
        let _ = writeln!(out, "{},{},{}", (ix as f64 + 0.5) * cell, (iy as f64 + 0.5) * cell, sum / n as f64);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackSample {
    pub t: f64,
    pub x: f64,
    pub y: f64,
}

/// True positions recorded in the trace's sample records.
pub fn track_from_trace(trace: &[TraceRecord]) -> Vec<TrackSample> {
    trace
        .iter()
        .filter_map(|r| match r.event {
            TraceEvent::Sample { x, y, .. } => Some(TrackSample { t: r.t, x, y }),
            _ => None,
        })
        .collect()
}

pub struct RunArtifacts {
    pub metrics: MetricsReport,
    pub track: Vec<TrackSample>,
}

impl RunArtifacts {
    pub fn load(dir: &Path) -> Result<Self, CompareError> {
        let mp = dir.join(METRICS_FILE);
        let text = fs::read_to_string(&mp)
            .map_err(|e| CompareError::Io { path: mp.display().to_string(), message: e.to_string() })?;
        let metrics = serde_json::from_str(&text)
            .map_err(|e| CompareError::Io { path: mp.display().to_string(), message: e.to_string() })?;
        let tp = dir.join(TRACE_FILE);
        let trace = load_trace(&tp).map_err(|message| CompareError::Io { path: tp.display().to_string(), message })?;
        Ok(Self { metrics, track: track_from_trace(&trace) })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub metric: String,
    pub a: f64,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    /// ∫ |p_a(t) − p_b(t)| dt over the horizontal plane, m·s.
    pub deviation_area: f64,
    pub max_deviation: f64,
    /// First sample time at which the tracks differ.
    pub first_deviation_t: Option<f64>,
}

impl Comparison {
    pub fn to_table(&self) -> String {
        let mut out = format!("{:<24} {:>14} {:>14}\n", "metric", "a", "b");
        for r in &self.rows {
            let _ = writeln!(out, "{:<24} {:>14.4} {:>14.4}", r.metric, r.a, r.b);
        }
        let _ = writeln!(out, "{:<24} {:>14.4}", "deviation_area_m_s", self.deviation_area);
        let _ = writeln!(out, "{:<24} {:>14.4}", "max_deviation_m", self.max_deviation);
        let first = self.first_deviation_t.map_or("-".to_owned(), |t| format!("{t:.2}"));
        let _ = writeln!(out, "{:<24} {:>14}", "first_deviation_t", first);
        out
    }
}

fn position_at(track: &[TrackSample], t: f64) -> Option<(f64, f64)> {
    let i = track.partition_point(|s| s.t <= t + 1e-9);
    (i > 0).then(|| (track[i - 1].x, track[i - 1].y))
}

pub fn compare_runs(a: &RunArtifacts, b: &RunArtifacts) -> Result<Comparison, CompareError> {
    if a.metrics.mission != b.metrics.mission {
        return Err(CompareError::MissionMismatch);
    }
    let (ma, mb) = (&a.metrics, &b.metrics);
    let row = |metric: &str, a: f64, b: f64| ComparisonRow { metric: metric.to_owned(), a, b };
    let mean_latency = |m: &MetricsReport| {
        if m.latencies.is_empty() {
            0.0
        } else {
            m.latencies.iter().map(|l| l.latency).sum::<f64>() / m.latencies.len() as f64
        }
    };
    let rows = vec![
        row("samples_measured", ma.samples_measured as f64, mb.samples_measured as f64),
        row("points_transmitted", ma.points_transmitted as f64, mb.points_transmitted as f64),
        row("compression_ratio", ma.compression_ratio, mb.compression_ratio),
        row("bytes_sent", ma.bytes_sent as f64, mb.bytes_sent as f64),
        row("bytes_downlink", ma.bytes_downlink as f64, mb.bytes_downlink as f64),
        row("bytes_baseline", ma.bytes_baseline as f64, mb.bytes_baseline as f64),
        row("bytes_saved_fraction", ma.bytes_saved_fraction, mb.bytes_saved_fraction),
        row("checkpoints", ma.checkpoints as f64, mb.checkpoints as f64),
        row("priority_packets", ma.priority_packets as f64, mb.priority_packets as f64),
        row("mean_latency_s", mean_latency(ma), mean_latency(mb)),
    ];

    let mut times: Vec<f64> = a.track.iter().chain(&b.track).map(|s| s.t).collect();
    times.sort_by(f64::total_cmp);
    times.dedup_by(|x, y| (*x - *y).abs() < 1e-9);
    let mut area = 0.0;
    let mut max_deviation: f64 = 0.0;
    let mut first = None;
    for (i, &t) in times.iter().enumerate() {
        let (Some(pa), Some(pb)) = (position_at(&a.track, t), position_at(&b.track, t)) else { continue };
        let d = (pa.0 - pb.0).hypot(pa.1 - pb.1);
        if d > 1e-9 && first.is_none() {
            first = Some(t);
        }
        max_deviation = max_deviation.max(d);
        if let Some(next) = times.get(i + 1) {
            area += d * (next - t);
        }
    }
    Ok(Comparison { rows, deviation_area: area, max_deviation, first_deviation_t: first })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelReport {
    pub channel: String,
    pub kind: ChannelKind,
    pub samples: usize,
    pub points: usize,
    pub compression_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub channels: Vec<ChannelReport>,
    pub samples: usize,
    pub points: usize,
    pub compression_ratio: f64,
}

fn ratio(points: usize, samples: usize) -> f64 {
    if samples == 0 {
        0.0
    } else {
        points as f64 / samples as f64
    }
}

/// Points each compression branch would transmit for a logged series.
///
/// Environmental channels with settings in `cfg.compression.env` go through the windowed
/// selector. Kinematic channels each get a one-axis constant-velocity filter at the channel's
/// sample period and count samples whose squared innovation exceeds the threshold.
pub fn evaluate_samples(
    samples: &[TelemetrySample],
    registry: &ChannelRegistry,
    cfg: &SimConfig,
) -> Result<IngestReport, String> {
    let mut by_channel: BTreeMap<_, Vec<TelemetrySample>> = BTreeMap::new();
    for s in samples {
        by_channel.entry(s.channel).or_default().push(*s);
    }
    let mut channels = Vec::new();
    for (id, series) in by_channel {
        let ch = registry.get(id).ok_or_else(|| format!("channel {id} is not registered"))?;
        let points = match ch.kind {
            ChannelKind::Environmental => {
                let Some(env) = cfg.compression.env.get(&ch.name) else { continue };
                env_flag_samples(&series, env).map_err(|e| e.to_string())?.compressed_points(env.include_intermediate).len()
            }
            ChannelKind::Kinematic => {
                let model = build_default_kinematic_model(std::slice::from_ref(ch), ch.sample_period, &cfg.compression.kinematic)
                    .map_err(|e| e.to_string())?;
                let tau = default_tau(&model, 0, cfg.compression.tau_floor);
                let mut state = FilterState::new(&model, &[series[0].value, 0.0], Matrix::identity(2).scale(cfg.compression.kinematic.r.max(1e-6)))
                    .map_err(|e| e.to_string())?;
                let mut points = 1;
                for s in &series[1..] {
                    let pred = kf_predict(&model, &state, &[0.0]).map_err(|e| e.to_string())?;
                    let res = Residual::new(id, pred.estimate()[0], s.value);
                    if classify(&res, tau) == Predictability::Unpredictable {
                        points += 1;
                    }
                    state = kf_update(&model, &pred, &[s.value]).unwrap_or(pred);
                }
                points
            }
        };
        channels.push(ChannelReport {
            channel: ch.name.clone(),
            kind: ch.kind,
            samples: series.len(),
            points,
            compression_ratio: ratio(points, series.len()),
        });
    }
    let samples: usize = channels.iter().map(|c| c.samples).sum();
    let points: usize = channels.iter().map(|c| c.points).sum();
    Ok(IngestReport { channels, samples, points, compression_ratio: ratio(points, samples) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplaySummary {
    pub records: usize,
    pub events: BTreeMap<String, usize>,
    pub checkpoints: usize,
    pub priority_packets: usize,
    pub controls_received: usize,
    pub end: Option<String>,
    /// `None` when the trace conforms to the phase graph.
    pub conformance_error: Option<String>,
    /// `None` when the event timeline holds; traces without events report a missing step.
    pub ordering_error: Option<String>,
}

pub fn replay_summary(trace: &[TraceRecord]) -> ReplaySummary {
    let mut events: BTreeMap<String, usize> = BTreeMap::new();
    let (mut checkpoints, mut priority_packets, mut controls_received, mut end) = (0, 0, 0, None);
    for r in trace {
        let name = serde_json::to_value(&r.event)
            .ok()
            .and_then(|v| v.get("event").and_then(|e| e.as_str()).map(str::to_owned))
            .unwrap_or_default();
        *events.entry(name).or_default() += 1;
        match &r.event {
            TraceEvent::CheckpointTx { .. } => checkpoints += 1,
            TraceEvent::PriorityTx { retransmission: false, .. } => priority_packets += 1,
            TraceEvent::ControlRx { duplicate: false, .. } => controls_received += 1,
            TraceEvent::RunEnd { reason } => end = Some(reason.clone()),
            _ => {}
        }
    }
    ReplaySummary {
        records: trace.len(),
        events,
        checkpoints,
        priority_packets,
        controls_received,
        end,
        conformance_error: check_conformance(trace).err().map(|e| e.to_string()),
        ordering_error: check_event_ordering(trace).err().map(|e| e.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::telemetry::{channels, Anomaly};
    use crate::trace::Source;
    use crate::ScalarField;

    fn sample(t: f64, x: f64, y: f64, v: f64) -> TraceRecord {
        let ev = TraceEvent::Sample {
            x,
            y,
            z: 0.0,
            heading: 0.0,
            values: [("temperature".to_owned(), v)].into(),
            mirror: None,
        };
        TraceRecord::new(t, Source::Engine, ev)
    }

    #[test]
    fn empty_heatmap_is_header_only() {
        assert_eq!(export_heatmap(&[], 5.0, "temperature"), "x,y,mean\n");
    }

    #[test]
    fn heatmap_bins_and_averages() {
        let trace = vec![sample(0.0, 1.0, 1.0, 10.0), sample(1.0, 2.0, 3.0, 12.0), sample(2.0, 7.0, 1.0, 5.0)];
        assert_eq!(export_heatmap(&trace, 5.0, "temperature"), "x,y,mean\n2.5,2.5,11\n7.5,2.5,5\n");
    }

    #[test]
    fn heatmap_peak_contains_anomaly() {
        let field = ScalarField {
            base: 10.0,
            anomalies: vec![Anomaly { x: 13.0, y: 27.0, radius: 6.0, amplitude: 3.0 }],
        };
        let mut trace = Vec::new();
        for i in 0..40 {
            for j in 0..40 {
                let (x, y) = (i as f64 + 0.5, j as f64 + 0.5);
                trace.push(sample(0.0, x, y, field.sample(x, y)));
            }
        }
        let csv = export_heatmap(&trace, 5.0, "temperature");
        let best = csv
            .lines()
            .skip(1)
            .map(|l| l.split(',').map(|v| v.parse::<f64>().unwrap()).collect::<Vec<_>>())
            .max_by(|a, b| a[2].total_cmp(&b[2]))
            .unwrap();
        assert!((best[0] - 13.0).abs() <= 2.5 && (best[1] - 27.0).abs() <= 2.5, "{best:?}");
    }

    #[test]
    fn constant_kinematic_series_needs_one_point() {
        let cfg = SimConfig::default();
        let reg = cfg.registry();
        let series: Vec<_> = (0..100)
            .map(|i| TelemetrySample { t: i as f64 * 0.25, channel: channels::DEPTH, value: 2.0 })
            .collect();
        let report = evaluate_samples(&series, &reg, &cfg).unwrap();
        assert_eq!(report.channels[0].points, 1);
        assert_eq!(report.samples, 100);
    }

    #[test]
    fn env_series_counts_run_endpoints() {
        let cfg = SimConfig::default();
        let reg = cfg.registry();
        let values = [10.0, 10.0, 10.0, 10.0, 10.0, 10.0, 10.0, 10.0, 13.0, 13.0, 13.0, 10.0];
        let series: Vec<_> = values
            .iter()
            .enumerate()
            .map(|(i, &v)| TelemetrySample { t: i as f64, channel: channels::TEMPERATURE, value: v })
            .collect();
        let report = evaluate_samples(&series, &reg, &cfg).unwrap();
        assert!(report.channels[0].points >= 1 && report.channels[0].points < values.len());
    }

    #[test]
    fn self_comparison_is_zero() {
        let track = vec![TrackSample { t: 0.0, x: 0.0, y: 0.0 }, TrackSample { t: 1.0, x: 1.0, y: 0.0 }];
        let m = MetricsReport::new(
            crate::vehicle::OperationMode::SemiAutonomous,
            crate::telemetry::Mission::default(),
            Default::default(),
            None,
        );
        let a = RunArtifacts { metrics: m.clone(), track: track.clone() };
        let b = RunArtifacts { metrics: m.clone(), track };
        let c = compare_runs(&a, &b).unwrap();
        assert_eq!(c.deviation_area, 0.0);
        assert_eq!(c.first_deviation_t, None);
        let mut other = m;
        other.mission.speed = 2.0;
        let b = RunArtifacts { metrics: other, track: vec![] };
        assert_eq!(compare_runs(&a, &b).unwrap_err(), CompareError::MissionMismatch);
    }
}
