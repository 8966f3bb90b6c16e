//! Pose estimation from leaf modes: Kabsch hypotheses from sampled
//! correspondences, the three cheap rejection checks, the Mahalanobis pose
//! energy, and preemptive RANSAC with Levenberg-Marquardt refinement.

mod energy;
mod hypothesis;
mod lm;
mod prepare;
mod ransac;
mod settings;
#[cfg(test)]
pub(crate) mod testutil;

pub use energy::{assign_modes, energy_gradient, frozen_energy, score_hypothesis};
pub use hypothesis::{
    generate_hypotheses, sample_correspondence, validate_hypothesis, Correspondence, PoseHypothesis, Validation,
};
pub use lm::{lm_refine, LmOutcome};
pub use prepare::{ModeTarget, PreparedFrame, PreparedPixel};
pub use ransac::{preemptive_ransac, relocalise, write_diagnostics, RelocResult, TraceRound};
pub use settings::{LmSettings, RansacSettings};
