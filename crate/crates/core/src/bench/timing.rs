//! Wall-clock instrumentation of the benchmark stages.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub const STAGE_TRAINING: &str = "training";
/// Per-frame `integrate_frame`, including the leaf refresh.
pub const STAGE_ADAPTATION: &str = "adaptation";
/// One `relocalise` call.
pub const STAGE_RELOCALISATION: &str = "relocalisation";

/// Runs `f` and returns its result with the elapsed time in milliseconds.
pub fn time_stage<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed().as_secs_f64() * 1e3)
}

/// Millisecond samples grouped by stage label.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StageTimings {
    samples: BTreeMap<String, Vec<f64>>,
}

impl StageTimings {
    pub fn new() -> Self {
        Self::default()
    }

    /// Times `f` and files the sample under `stage`.
    pub fn record<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let (out, ms) = time_stage(f);
        self.push(stage, ms);
        out
    }

    pub fn push(&mut self, stage: &str, ms: f64) {
        self.samples.entry(stage.to_string()).or_default().push(ms);
    }

    pub fn samples(&self, stage: &str) -> &[f64] {
        self.samples.get(stage).map_or(&[], Vec::as_slice)
    }

    pub fn stages(&self) -> impl Iterator<Item = &str> {
        self.samples.keys().map(String::as_str)
    }

    pub fn summarise(&self) -> BTreeMap<String, TimingSummary> {
        self.samples
            .iter()
            .filter_map(|(k, v)| Some((k.clone(), TimingSummary::from_samples(v)?)))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingSummary {
    pub count: usize,
    pub min: f64,
    pub median: f64,
    /// Nearest-rank 95th percentile.
    pub p95: f64,
    pub max: f64,
}

impl TimingSummary {
    /// `None` for an empty sample set.
    pub fn from_samples(samples: &[f64]) -> Option<Self> {
        if samples.is_empty() {
            return None;
        }
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        let n = s.len();
        let median = if n % 2 == 1 { s[n / 2] } else { 0.5 * (s[n / 2 - 1] + s[n / 2]) };
        let rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n);
        Some(Self { count: n, min: s[0], median, p95: s[rank - 1], max: s[n - 1] })
    }
}
