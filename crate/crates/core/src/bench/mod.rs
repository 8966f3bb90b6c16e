//! Data ingestion, the synthetic scene renderer, the evaluation protocols
//! and stage timing.

pub mod novelty;
pub mod protocol;
pub mod report;
pub mod sequence;
pub mod synth;
pub mod timing;

pub use novelty::{compute_novelty_bins, default_bin_edges, nearest_training_offset, offset_pose, perturb_pose, BinEdge};
pub use protocol::{
    adapt_forest, run_adaptation_benchmark, run_adaptation_with_forest, run_novelty_benchmark, run_recovery_benchmark,
    synthetic_orbits, synthetic_suite, synthetic_suite_from, BenchConfig, SyntheticSuite, DIAGNOSTIC_TOP,
};
pub use report::{BenchReport, FrameOutcome, NoveltyBin};
pub use sequence::{load_sequence, read_intrinsics, save_sequence, write_intrinsics, Sequence, MISSING_DEPTH_MM};
pub use synth::{
    cast_ray, generate_synthetic_sequence, orbit_trajectory, render_frame, scene_a, scene_b, OrbitSettings,
    RenderSettings, SceneSpec, Surface,
};
pub use timing::{time_stage, StageTimings, TimingSummary, STAGE_ADAPTATION, STAGE_RELOCALISATION, STAGE_TRAINING};
