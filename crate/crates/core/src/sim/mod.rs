//! Deterministic fixed-tick simulator, run metrics and evaluation exports.

mod analysis;
mod config;
mod engine;
mod metrics;

pub use analysis::{
    compare_runs, evaluate_samples, export_heatmap, load_trace, replay_summary, run, track_from_trace, write_run,
    ChannelReport, CompareError, Comparison, ComparisonRow, IngestReport, ReplaySummary, RunArtifacts, RunError,
    RunOutput, TrackSample, METRICS_FILE, TRACE_FILE,
};
pub use config::{
    CompressionConfig, ConfigError, Disturbance, OperatorMode, PacingConfig, SensorConfig, SimConfig, StepInjection,
};
pub use engine::{Engine, Snapshot, SubmitError};
pub use metrics::{baseline_bytes, LatencySample, LossCounts, MetricsReport, QueueSample, RunCounts};
