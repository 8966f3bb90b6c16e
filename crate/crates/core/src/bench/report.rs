//! Benchmark results and their serialisations.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::timing::TimingSummary;
use crate::geom::PoseError;

/// Result of one relocalisation attempt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameOutcome {
    pub frame: usize,
    pub success: bool,
    /// Camera-centre distance in metres; absent when relocalisation failed.
    pub translation_error: Option<f64>,
    /// Geodesic rotation error in degrees.
    pub rotation_error_deg: Option<f64>,
    /// Why no pose was produced, if none was.
    pub failure: Option<String>,
}

impl FrameOutcome {
    pub fn from_error(frame: usize, error: &PoseError, max_translation: f64, max_rotation_deg: f64) -> Self {
        Self {
            frame,
            success: error.within(max_translation, max_rotation_deg),
            translation_error: Some(error.translational),
            rotation_error_deg: Some(error.angular),
            failure: None,
        }
    }

    pub fn failed(frame: usize, reason: impl Into<String>) -> Self {
        Self { frame, success: false, translation_error: None, rotation_error_deg: None, failure: Some(reason.into()) }
    }
}

/// Test poses whose novelty is within `max_translation` metres and
/// `max_rotation` degrees (and outside every earlier bin). Both bounds are
/// `None` for the overflow bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoveltyBin {
    pub max_translation: Option<f64>,
    pub max_rotation: Option<f64>,
    pub attempts: usize,
    pub successes: usize,
}

impl NoveltyBin {
    /// `None` for an empty bin.
    pub fn success_rate(&self) -> Option<f64> {
        (self.attempts > 0).then(|| self.successes as f64 / self.attempts as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    /// `adaptation`, `recovery` or `novelty`.
    pub protocol: String,
    pub scene: String,
    pub seed: u64,
    pub max_translation: f64,
    pub max_rotation_deg: f64,
    pub frames: Vec<FrameOutcome>,
    pub success_rate: f64,
    /// Recovery only: first frame relocalised successfully.
    pub first_success: Option<usize>,
    /// Recovery only: success rate over frames numbered above `late_from`.
    pub late_from: Option<usize>,
    pub late_success_rate: Option<f64>,
    pub novelty: Vec<NoveltyBin>,
    pub timings: BTreeMap<String, TimingSummary>,
}

/// The report minus wall-clock data; equal across re-runs with one seed.
#[derive(Serialize)]
struct Canonical<'a> {
    protocol: &'a str,
    scene: &'a str,
    seed: u64,
    max_translation: f64,
    max_rotation_deg: f64,
    frames: &'a [FrameOutcome],
    success_rate: f64,
    first_success: Option<usize>,
    late_from: Option<usize>,
    late_success_rate: Option<f64>,
    novelty: &'a [NoveltyBin],
}

impl BenchReport {
    pub fn new(protocol: &str, scene: &str, seed: u64, max_translation: f64, max_rotation_deg: f64) -> Self {
        Self {
            protocol: protocol.into(),
            scene: scene.into(),
            seed,
            max_translation,
            max_rotation_deg,
            frames: Vec::new(),
            success_rate: 0.0,
            first_success: None,
            late_from: None,
            late_success_rate: None,
            novelty: Vec::new(),
            timings: BTreeMap::new(),
        }
    }

    /// Recomputes the derived rates from `frames`.
    pub fn finish(&mut self) {
        self.success_rate = rate(self.frames.iter());
        if let Some(from) = self.late_from {
            let late: Vec<_> = self.frames.iter().filter(|f| f.frame > from).collect();
            self.late_success_rate = (!late.is_empty()).then(|| rate(late.into_iter()));
        }
    }

    pub fn successes(&self) -> usize {
        self.frames.iter().filter(|f| f.success).count()
    }

    /// Full report including timings, pretty-printed.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    /// Compact JSON without timings.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(&Canonical {
            protocol: &self.protocol,
            scene: &self.scene,
            seed: self.seed,
            max_translation: self.max_translation,
            max_rotation_deg: self.max_rotation_deg,
            frames: &self.frames,
            success_rate: self.success_rate,
            first_success: self.first_success,
            late_from: self.late_from,
            late_success_rate: self.late_success_rate,
            novelty: &self.novelty,
        })
        .expect("report serialises")
    }

    /// Human-readable summary tables.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "protocol   {}", self.protocol);
        let _ = writeln!(s, "scene      {}", self.scene);
        let _ = writeln!(s, "seed       {}", self.seed);
        let _ = writeln!(
            s,
            "success    {}/{} = {:.1}% at {:.0}cm/{:.0}°",
            self.successes(),
            self.frames.len(),
            100.0 * self.success_rate,
            100.0 * self.max_translation,
            self.max_rotation_deg
        );
        if let Some(f) = self.first_success {
            let _ = writeln!(s, "first success at frame {f}");
        }
        if let (Some(from), Some(r)) = (self.late_from, self.late_success_rate) {
            let _ = writeln!(s, "success after frame {from}: {:.1}%", 100.0 * r);
        }
        if !self.novelty.is_empty() {
            let _ = writeln!(s, "\n{:>12} {:>10} {:>9} {:>10} {:>8}", "translation", "rotation", "attempts", "successes", "rate");
            for b in &self.novelty {
                let (t, r) = match (b.max_translation, b.max_rotation) {
                    (Some(t), Some(r)) => (format!("≤{:.0}cm", 100.0 * t), format!("≤{r:.0}°")),
                    _ => ("beyond".into(), "beyond".into()),
                };
                let rate = b.success_rate().map_or("-".into(), |r| format!("{:.1}%", 100.0 * r));
                let _ = writeln!(s, "{t:>12} {r:>10} {:>9} {:>10} {rate:>8}", b.attempts, b.successes);
            }
        }
        if !self.timings.is_empty() {
            let _ = writeln!(s, "\n{:<16} {:>6} {:>10} {:>10} {:>10} {:>10}", "stage (ms)", "count", "min", "median", "p95", "max");
            for (k, t) in &self.timings {
                let _ = writeln!(
                    s,
                    "{k:<16} {:>6} {:>10.2} {:>10.2} {:>10.2} {:>10.2}",
                    t.count, t.min, t.median, t.p95, t.max
                );
            }
        }
        s
    }
}

fn rate<'a>(frames: impl Iterator<Item = &'a FrameOutcome>) -> f64 {
    let (mut n, mut ok) = (0usize, 0usize);
    for f in frames {
        n += 1;
        ok += f.success as usize;
    }
    if n == 0 {
        0.0
    } else {
        ok as f64 / n as f64
    }
}
