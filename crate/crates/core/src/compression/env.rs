use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::CompressionError;
use crate::scalar::Real;
use crate::telemetry::TelemetrySample;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvCompressorConfig<T> {
    /// Number of preceding samples averaged into the reference mean.
    pub window: usize,
    /// Squared-error threshold in channel units².
    pub threshold: T,
    /// Emit every flagged index instead of only run boundaries.
    #[serde(default)]
    pub include_intermediate: bool,
}

impl<T: Real> EnvCompressorConfig<T> {
    pub fn new(window: usize, threshold: T) -> Self {
        Self { window, threshold, include_intermediate: false }
    }

    pub fn validate(&self) -> Result<(), CompressionError> {
        if self.window == 0 {
            return Err(CompressionError::InvalidConfig("window must be at least 1".into()));
        }
        if !(self.threshold >= T::zero()) {
            return Err(CompressionError::InvalidConfig("threshold must be non-negative".into()));
        }
        Ok(())
    }
}

/// Maximal run of consecutive flagged indices, inclusive on both ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlagRun {
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FlaggedPoints {
    pub flagged: Vec<usize>,
    pub runs: Vec<FlagRun>,
}

impl FlaggedPoints {
    fn from_flags(flagged: Vec<usize>) -> Self {
        let mut runs: Vec<FlagRun> = Vec::new();
        for &i in &flagged {
            match runs.last_mut() {
                Some(r) if r.end + 1 == i => r.end = i,
                _ => runs.push(FlagRun { start: i, end: i }),
            }
        }
        Self { flagged, runs }
    }

    /// Start and end of every run (once for singleton runs), or every flagged index.
    pub fn compressed_points(&self, include_intermediate: bool) -> Vec<usize> {
        if include_intermediate {
            return self.flagged.clone();
        }
        let mut out = Vec::with_capacity(self.runs.len() * 2);
        for r in &self.runs {
            out.push(r.start);
            if r.end != r.start {
                out.push(r.end);
            }
        }
        out
    }
}

fn window_mean<T: Real>(window: impl Iterator<Item = T>, len: usize) -> T {
    window.fold(T::zero(), |acc, v| acc + v) / T::lit(len as f64)
}

/// Flags index `i ≥ W` when `(xᵢ − mean(x[i−W..i]))² > T_h`; earlier indices lack history.
pub fn env_flag_points<T: Real>(
    values: &[T],
    cfg: &EnvCompressorConfig<T>,
) -> Result<FlaggedPoints, CompressionError> {
    cfg.validate()?;
    if values.is_empty() {
        return Err(CompressionError::EmptySeries);
    }
    let w = cfg.window;
    let flagged = (w..values.len())
        .filter(|&i| {
            let mu = window_mean(values[i - w..i].iter().copied(), w);
            let d = values[i] - mu;
            d * d > cfg.threshold
        })
        .collect();
    Ok(FlaggedPoints::from_flags(flagged))
}

/// [`env_flag_points`] over a time-ordered sample series.
pub fn env_flag_samples<T: Real>(
    series: &[TelemetrySample<T>],
    cfg: &EnvCompressorConfig<T>,
) -> Result<FlaggedPoints, CompressionError> {
    if let Some(i) = series.windows(2).position(|p| p[1].t < p[0].t) {
        return Err(CompressionError::Unsorted(i + 1));
    }
    let values: Vec<T> = series.iter().map(|s| s.value).collect();
    env_flag_points(&values, cfg)
}

/// Result of pushing one sample into an [`EnvDetector`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvObservation<T> {
    pub index: usize,
    /// Reference mean, once the window is full.
    pub mean: Option<T>,
    pub flagged: bool,
    /// This sample opened a new run.
    pub run_started: bool,
    /// The previous sample closed a run.
    pub run_closed: Option<FlagRun>,
}

impl<T: Real> EnvObservation<T> {
    pub fn deviation(&self, value: T) -> Option<T> {
        self.mean.map(|m| value - m)
    }
}

/// Streaming form of [`env_flag_points`]; produces the same flags sample by sample.
#[derive(Debug, Clone)]
pub struct EnvDetector<T> {
    cfg: EnvCompressorConfig<T>,
    history: VecDeque<T>,
    next_index: usize,
    open_run: Option<FlagRun>,
}

impl<T: Real> EnvDetector<T> {
    pub fn new(cfg: EnvCompressorConfig<T>) -> Result<Self, CompressionError> {
        cfg.validate()?;
        Ok(Self { cfg, history: VecDeque::with_capacity(cfg.window), next_index: 0, open_run: None })
    }

    pub fn config(&self) -> &EnvCompressorConfig<T> {
        &self.cfg
    }

    pub fn push(&mut self, value: T) -> EnvObservation<T> {
        let index = self.next_index;
        self.next_index += 1;
        let w = self.cfg.window;
        let mean = (self.history.len() == w).then(|| window_mean(self.history.iter().copied(), w));
        let flagged = mean.is_some_and(|mu| {
            let d = value - mu;
            d * d > self.cfg.threshold
        });
        if self.history.len() == w {
            self.history.pop_front();
        }
        self.history.push_back(value);

        let mut run_started = false;
        let mut run_closed = None;
        match (&mut self.open_run, flagged) {
            (Some(run), true) => run.end = index,
            (Some(_), false) => run_closed = self.open_run.take(),
            (None, true) => {
                self.open_run = Some(FlagRun { start: index, end: index });
                run_started = true;
            }
            (None, false) => {}
        }
        EnvObservation { index, mean, flagged, run_started, run_closed }
    }

    /// Closes any open run, e.g. at the end of a series.
    pub fn finish(&mut self) -> Option<FlagRun> {
        self.open_run.take()
    }
}
