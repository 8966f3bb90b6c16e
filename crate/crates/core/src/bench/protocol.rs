//! The three evaluation protocols: adapt-then-test, per-frame recovery and
//! pose novelty.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::novelty::{compute_novelty_bins, default_bin_edges, offset_pose, random_unit, BinEdge};
use super::report::{BenchReport, FrameOutcome};
use super::sequence::Sequence;
use super::synth::{generate_synthetic_sequence, orbit_trajectory, render_frame, scene_a, scene_b, OrbitSettings, RenderSettings, SceneSpec};
use super::timing::{StageTimings, STAGE_ADAPTATION, STAGE_RELOCALISATION, STAGE_TRAINING};
use crate::adapt::{integrate_frame, AdaptConfig, AdaptState};
use crate::error::{Error, Result};
use crate::features::OffsetRange;
use crate::forest::{strip_leaves, train_forest, RegressionForest, TrainingConfig};
use crate::frame::RgbdFrame;
use crate::geom::pose_error;
use crate::reloc::{relocalise, write_diagnostics, RansacSettings};

/// Candidates per round written to the diagnostics stream.
pub const DIAGNOSTIC_TOP: usize = 16;

/// Everything a benchmark run depends on besides its input sequences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    /// Master seed; every random choice of a run derives from it.
    pub seed: u64,
    pub training: TrainingConfig,
    pub adapt: AdaptConfig,
    pub ransac: RansacSettings,
    /// Success thresholds, metres and degrees.
    pub max_translation: f64,
    pub max_rotation_deg: f64,
    /// Recovery runs also report the success rate after this frame.
    pub recovery_late_from: usize,
    pub novelty_edges: Vec<BinEdge>,
    /// Re-cluster every leaf once after the last adaptation frame, so that
    /// testing sees all adaptation data rather than only what the
    /// round-robin schedule reached. Not applied in the recovery protocol.
    pub final_refresh: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            training: TrainingConfig::default(),
            adapt: AdaptConfig::default(),
            ransac: RansacSettings::default(),
            max_translation: 0.05,
            max_rotation_deg: 5.0,
            recovery_late_from: 50,
            novelty_edges: default_bin_edges(),
            final_refresh: true,
        }
    }
}

impl BenchConfig {
    /// Settings for the 320×240 synthetic scenes: depth-10 trees, offsets
    /// halved to match the halved focal length, and fewer training
    /// examples per frame.
    pub fn synthetic() -> Self {
        Self {
            training: TrainingConfig {
                max_depth: 10,
                examples_per_frame: 500,
                offset_range: OffsetRange::symmetric(65.0),
                populate_leaves: false,
                ..TrainingConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        self.training.validate()?;
        self.adapt.validate()?;
        self.ransac.validate()?;
        if !(self.max_translation > 0.0 && self.max_rotation_deg > 0.0) {
            return Err(Error::InvalidConfig("success thresholds must be positive".into()));
        }
        Ok(())
    }

    fn sub_seed(&self, stream: u64) -> u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng.random()
    }

    pub fn training_seed(&self) -> u64 {
        self.sub_seed(1)
    }

    /// Adaptation settings with the reservoir seed derived from the master
    /// seed.
    pub fn adapt_config(&self) -> AdaptConfig {
        AdaptConfig { seed: self.sub_seed(2), ..self.adapt }
    }

    /// Seed of the relocalisation attempt on frame `frame`.
    pub fn reloc_seed(&self, frame: usize) -> u64 {
        self.sub_seed(3) ^ (frame as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
    }

    fn novelty_seed(&self) -> u64 {
        self.sub_seed(4)
    }
}

fn frame_pose(frame: &RgbdFrame) -> Result<crate::geom::RigidTransform> {
    frame.gt_pose.ok_or_else(|| Error::Frame { index: frame.index, message: "frame has no ground-truth pose".into() })
}

/// Relocalises `frame` and scores the estimate against its ground truth.
/// Relocalisation failures count as unsuccessful attempts.
fn attempt(
    frame: &RgbdFrame,
    number: usize,
    forest: &RegressionForest,
    state: &AdaptState,
    config: &BenchConfig,
    timings: &mut StageTimings,
    diagnostics: &mut Option<&mut dyn Write>,
) -> Result<FrameOutcome> {
    let gt = frame_pose(frame)?;
    let mut settings = config.ransac;
    settings.diagnostics |= diagnostics.is_some();
    let seed = config.reloc_seed(number);
    let result = timings.record(STAGE_RELOCALISATION, || relocalise(frame, state, forest, &settings, seed));
    match result {
        Ok(r) => {
            if let Some(out) = diagnostics.as_mut() {
                write_diagnostics(&r, number, DIAGNOSTIC_TOP, &mut **out)?;
            }
            let e = pose_error(&r.pose, &gt);
            Ok(FrameOutcome::from_error(number, &e, config.max_translation, config.max_rotation_deg))
        }
        Err(e @ (Error::NoModes | Error::NoHypotheses)) => Ok(FrameOutcome::failed(number, e.to_string())),
        Err(e) => Err(e),
    }
}

/// Feeds every frame of `sequence` to a fresh state for `forest`, using
/// ground-truth poses, then applies the final refresh if configured.
pub fn adapt_forest(
    forest: &RegressionForest,
    sequence: &Sequence,
    config: &BenchConfig,
    timings: &mut StageTimings,
) -> Result<AdaptState> {
    let mut state = AdaptState::new(forest.leaf_count(), config.adapt_config());
    for frame in &sequence.frames {
        let pose = frame_pose(frame)?;
        timings.record(STAGE_ADAPTATION, || integrate_frame(&mut state, forest, frame, &pose, true));
    }
    if config.final_refresh {
        state.refresh_all();
    }
    Ok(state)
}

/// Train on `pretrain`, strip the leaves, adapt on `adapt` and relocalise
/// every frame of `test`. Frames are numbered from 1.
pub fn run_adaptation_benchmark(
    pretrain: &Sequence,
    adapt: &Sequence,
    test: &Sequence,
    config: &BenchConfig,
) -> Result<BenchReport> {
    config.validate()?;
    let mut timings = StageTimings::new();
    let forest = timings.record(STAGE_TRAINING, || {
        train_forest(&pretrain.frames, &config.training, config.training_seed())
    })?;
    run_adaptation_with_forest(&forest, adapt, test, config, &mut timings, None)
}

/// [`run_adaptation_benchmark`] starting from an already trained forest,
/// whose leaves are discarded first.
pub fn run_adaptation_with_forest(
    forest: &RegressionForest,
    adapt: &Sequence,
    test: &Sequence,
    config: &BenchConfig,
    timings: &mut StageTimings,
    mut diagnostics: Option<&mut dyn Write>,
) -> Result<BenchReport> {
    config.validate()?;
    let stripped = strip_leaves(forest);
    let state = adapt_forest(&stripped, adapt, config, timings)?;
    let mut report = BenchReport::new("adaptation", &test.name, config.seed, config.max_translation, config.max_rotation_deg);
    for (i, frame) in test.frames.iter().enumerate() {
        report.frames.push(attempt(frame, i + 1, &stripped, &state, config, timings, &mut diagnostics)?);
    }
    report.timings = timings.summarise();
    report.finish();
    Ok(report)
}

/// At every frame but the first, assume tracking was lost and relocalise
/// with what has been learned so far; then integrate the frame at its
/// ground-truth pose. The report covers frames 2..=N.
pub fn run_recovery_benchmark(
    test: &Sequence,
    forest: &RegressionForest,
    config: &BenchConfig,
    mut diagnostics: Option<&mut dyn Write>,
) -> Result<BenchReport> {
    config.validate()?;
    let stripped = strip_leaves(forest);
    let mut state = AdaptState::new(stripped.leaf_count(), config.adapt_config());
    let mut timings = StageTimings::new();
    let mut report = BenchReport::new("recovery", &test.name, config.seed, config.max_translation, config.max_rotation_deg);
    report.late_from = Some(config.recovery_late_from);
    for (i, frame) in test.frames.iter().enumerate() {
        let number = i + 1;
        if number > 1 {
            let outcome = attempt(frame, number, &stripped, &state, config, &mut timings, &mut diagnostics)?;
            if outcome.success && report.first_success.is_none() {
                report.first_success = Some(number);
            }
            report.frames.push(outcome);
        }
        let pose = frame_pose(frame)?;
        timings.record(STAGE_ADAPTATION, || integrate_frame(&mut state, &stripped, frame, &pose, true));
    }
    report.timings = timings.summarise();
    report.finish();
    Ok(report)
}

/// Adapts `forest` on `training`, then renders `test_count` views of
/// `scene` perturbed from random training poses and groups the
/// relocalisation results by novelty.
///
/// Test poses come in groups of one per bin. A group shares its base pose,
/// offset direction, rotation axis and relative position between
/// consecutive edges, and differs only in the offset magnitudes, so the
/// bins are compared on matched views.
pub fn run_novelty_benchmark(
    forest: &RegressionForest,
    scene: &SceneSpec,
    training: &Sequence,
    render: &RenderSettings,
    test_count: usize,
    config: &BenchConfig,
) -> Result<BenchReport> {
    config.validate()?;
    let edges = &config.novelty_edges;
    if edges.is_empty() {
        return Err(Error::InvalidConfig("novelty_edges must not be empty".into()));
    }
    let training_poses = training.poses()?;
    if training_poses.is_empty() {
        return Err(Error::DegenerateTrajectory("empty training trajectory".into()));
    }
    let stripped = strip_leaves(forest);
    let mut timings = StageTimings::new();
    let state = adapt_forest(&stripped, training, config, &mut timings)?;

    let bins = edges.len();
    let mut poses = Vec::with_capacity(test_count);
    let mut group = None;
    for i in 0..test_count {
        let b = i % bins;
        if b == 0 {
            let mut rng = ChaCha8Rng::seed_from_u64(config.novelty_seed());
            rng.set_stream((i / bins) as u64);
            let base = training_poses[rng.random_range(0..training_poses.len())];
            let direction = random_unit(&mut rng);
            let axis = random_unit(&mut rng);
            group = Some((base, direction, axis, rng.random::<f64>(), rng.random::<f64>()));
        }
        let (base, direction, axis, ut, ur) = group.expect("set at the first bin");
        let lo = if b == 0 { (0.0, 0.0) } else { edges[b - 1] };
        let hi = edges[b];
        let t = lo.0 + ut * (hi.0 - lo.0);
        let r = lo.1 + ur * (hi.1 - lo.1);
        poses.push(offset_pose(&base, &direction, t, &axis, r));
    }

    let mut report = BenchReport::new("novelty", &training.name, config.seed, config.max_translation, config.max_rotation_deg);
    for (i, pose) in poses.iter().enumerate() {
        let frame = render_frame(scene, pose, &render.intrinsics, render.width, render.height, render.noise_sigma, render.noise_seed, i);
        report.frames.push(attempt(&frame, i + 1, &stripped, &state, config, &mut timings, &mut None)?);
    }
    let flags: Vec<bool> = report.frames.iter().map(|f| f.success).collect();
    report.novelty = compute_novelty_bins(&poses, &training_poses, &flags, edges)?;
    report.timings = timings.summarise();
    report.finish();
    Ok(report)
}

/// Pre-training, adaptation and test sequences for the synthetic rooms.
#[derive(Debug, Clone)]
pub struct SyntheticSuite {
    /// Scene A.
    pub pretrain: Sequence,
    /// Scene B.
    pub adapt: Sequence,
    /// Scene B, along a loop interleaved with the adaptation loop.
    pub test: Sequence,
}

/// Heading range of the synthetic orbits in radians. A full circle shows
/// more surface than a depth-10 forest can tell apart.
pub const SYNTHETIC_SWEEP: f64 = 2.0;

/// Orbits for the synthetic suite: pre-training and adaptation share one
/// arc, the test arc is shifted by half a frame, runs closer to the centre
/// and has its wobble out of phase.
pub fn synthetic_orbits(frames: usize) -> (OrbitSettings, OrbitSettings) {
    let train = OrbitSettings { frames, sweep: SYNTHETIC_SWEEP, ..OrbitSettings::default() };
    let test = OrbitSettings {
        start_heading: 0.5 * SYNTHETIC_SWEEP / frames.max(1) as f64,
        wobble_phase: 1.3,
        radius: 0.42,
        ..train
    };
    (train, test)
}

/// Renders the synthetic suite; each sequence gets its own noise seed.
pub fn synthetic_suite(frames: usize, render: &RenderSettings) -> Result<SyntheticSuite> {
    let (train, test) = synthetic_orbits(frames);
    synthetic_suite_from(&train, &test, render)
}

/// The synthetic suite along custom orbits.
pub fn synthetic_suite_from(train: &OrbitSettings, test: &OrbitSettings, render: &RenderSettings) -> Result<SyntheticSuite> {
    let train_poses = orbit_trajectory(train)?;
    let test_poses = orbit_trajectory(test)?;
    let with_seed = |k: u64| RenderSettings { noise_seed: render.noise_seed.wrapping_mul(3).wrapping_add(k), ..*render };
    Ok(SyntheticSuite {
        pretrain: generate_synthetic_sequence("scene-a", &scene_a(), &train_poses, &with_seed(0))?,
        adapt: generate_synthetic_sequence("scene-b", &scene_b(), &train_poses, &with_seed(1))?,
        test: generate_synthetic_sequence("scene-b-test", &scene_b(), &test_poses, &with_seed(2))?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::CameraIntrinsics;

    fn tiny_render() -> RenderSettings {
        RenderSettings { width: 80, height: 60, intrinsics: CameraIntrinsics::seven_scenes().scaled(0.125), ..RenderSettings::default() }
    }

    fn tiny_config() -> BenchConfig {
        let mut c = BenchConfig::synthetic();
        c.training.max_depth = 6;
        c.training.candidate_count = 64;
        c.training.examples_per_frame = 200;
        c.training.offset_range = OffsetRange::symmetric(16.0);
        c.ransac.max_initial_hypotheses = 64;
        c.ransac.cull_to = 16;
        c.ransac.batch_size = 100;
        c
    }

    #[test]
    fn config_round_trips_through_toml() {
        let c = BenchConfig::synthetic();
        assert_eq!(BenchConfig::from_toml_str(&c.to_toml_string()).unwrap(), c);
        let partial = BenchConfig::from_toml_str("seed = 9\n[training]\nmax_depth = 7\n").unwrap();
        assert_eq!((partial.seed, partial.training.max_depth), (9, 7));
        assert!(BenchConfig::from_toml_str("sed = 1").is_err());
        assert!(BenchConfig::from_toml_str("max_translation = -1.0").is_err());
    }

    #[test]
    fn zero_adaptation_frames_fail_every_test_frame() {
        let suite = synthetic_suite(4, &tiny_render()).unwrap();
        let cfg = tiny_config();
        let forest = train_forest(&suite.pretrain.frames, &cfg.training, 1).unwrap();
        let empty = Sequence::new("none", vec![]);
        let r = run_adaptation_with_forest(&forest, &empty, &suite.test, &cfg, &mut StageTimings::new(), None).unwrap();
        assert_eq!(r.frames.len(), 4);
        assert_eq!(r.success_rate, 0.0);
        assert!(r.frames.iter().all(|f| f.failure.as_deref() == Some(&Error::NoModes.to_string()[..])));
    }

    #[test]
    fn recovery_reports_every_frame_but_the_first() {
        let suite = synthetic_suite(6, &tiny_render()).unwrap();
        let cfg = tiny_config();
        let forest = train_forest(&suite.pretrain.frames, &cfg.training, 1).unwrap();
        let r = run_recovery_benchmark(&suite.adapt, &forest, &cfg, None).unwrap();
        assert_eq!(r.frames.len(), 5);
        assert_eq!(r.frames.iter().map(|f| f.frame).collect::<Vec<_>>(), vec![2, 3, 4, 5, 6]);
        assert!(r.first_success.is_none_or(|f| f >= 2));
        assert!(r.timings.contains_key(STAGE_ADAPTATION));
        assert_eq!(r.timings[STAGE_ADAPTATION].count, 6);
        assert_eq!(r.timings[STAGE_RELOCALISATION].count, 5);
        assert!(!r.timings.contains_key(STAGE_TRAINING));
    }

    #[test]
    fn adaptation_run_is_reproducible() {
        let suite = synthetic_suite(5, &tiny_render()).unwrap();
        let cfg = tiny_config();
        let a = run_adaptation_benchmark(&suite.pretrain, &suite.adapt, &suite.test, &cfg).unwrap();
        let b = run_adaptation_benchmark(&suite.pretrain, &suite.adapt, &suite.test, &cfg).unwrap();
        assert_eq!(a.canonical_json(), b.canonical_json());
        assert_eq!(a.timings[STAGE_TRAINING].count, 1);
        assert_eq!(a.timings[STAGE_ADAPTATION].count, 5);
    }

    #[test]
    fn diagnostics_stream_has_a_line_per_round() {
        let suite = synthetic_suite(4, &tiny_render()).unwrap();
        let cfg = tiny_config();
        let forest = train_forest(&suite.pretrain.frames, &cfg.training, 1).unwrap();
        let mut out = Vec::new();
        run_adaptation_with_forest(&forest, &suite.adapt, &suite.adapt, &cfg, &mut StageTimings::new(), Some(&mut out)).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.lines().count() >= 4);
        for line in text.lines() {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            assert!(v["hypotheses"].as_array().unwrap().len() <= DIAGNOSTIC_TOP);
        }
    }

    #[test]
    fn novelty_bins_partition_the_test_poses() {
        let render = tiny_render();
        let suite = synthetic_suite(6, &render).unwrap();
        let cfg = tiny_config();
        let forest = train_forest(&suite.pretrain.frames, &cfg.training, 1).unwrap();
        let r = run_novelty_benchmark(&forest, &scene_b(), &suite.adapt, &render, 22, &cfg).unwrap();
        assert_eq!(r.novelty.len(), cfg.novelty_edges.len() + 1);
        assert_eq!(r.novelty.iter().map(|b| b.attempts).sum::<usize>(), 22);
        assert_eq!(r.novelty.iter().map(|b| b.successes).sum::<usize>(), r.successes());
    }
}
