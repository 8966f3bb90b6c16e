use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmSettings {
    pub max_iterations: usize,
    /// Starting Marquardt damping λ.
    pub initial_damping: f64,
    /// Stop once the update twist is shorter than this.
    pub step_tolerance: f64,
    /// Stop once an accepted step lowers the energy by less than this
    /// fraction of its current value.
    pub energy_tolerance: f64,
}

impl Default for LmSettings {
    fn default() -> Self {
        Self {
            max_iterations: 20,
            initial_damping: 1e-3,
            step_tolerance: 1e-6,
            energy_tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RansacSettings {
    /// Number of independent generation tasks.
    pub max_initial_hypotheses: usize,
    /// Hypotheses kept after scoring on the first pixel batch.
    pub cull_to: usize,
    /// Pixels added to the scoring set each round.
    pub batch_size: usize,
    /// Minimum distance in metres between the three sampled world points.
    pub min_pair_distance: f64,
    /// A colour channel mismatches when it differs by more than this.
    pub colour_channel_tolerance: u8,
    /// Hypotheses with more mismatching channels are rejected.
    pub colour_mismatch_max: u8,
    /// Largest allowed difference between corresponding camera-space and
    /// world-space pair distances, in metres.
    pub rigidity_tolerance: f64,
    /// Sampling attempts per generation task.
    pub max_generation_iterations: usize,
    /// Energy charged for a scoring pixel whose leaves hold no modes.
    pub no_mode_penalty: f64,
    /// Record the surviving hypotheses of every round.
    pub diagnostics: bool,
    pub lm: LmSettings,
}

impl Default for RansacSettings {
    fn default() -> Self {
        Self {
            max_initial_hypotheses: 1024,
            cull_to: 64,
            batch_size: 500,
            min_pair_distance: 0.30,
            colour_channel_tolerance: 30,
            colour_mismatch_max: 0,
            rigidity_tolerance: 0.10,
            max_generation_iterations: 50,
            no_mode_penalty: 100.0,
            diagnostics: false,
            lm: LmSettings::default(),
        }
    }
}

impl RansacSettings {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.max_initial_hypotheses == 0 || self.cull_to == 0 {
            return bad("hypothesis counts must be at least 1");
        }
        if self.cull_to > self.max_initial_hypotheses {
            return bad("cull_to exceeds max_initial_hypotheses");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.max_generation_iterations == 0 {
            return bad("max_generation_iterations must be at least 1");
        }
        if !(self.rigidity_tolerance >= 0.0 && self.min_pair_distance >= 0.0 && self.no_mode_penalty >= 0.0) {
            return bad("distances and penalty must be non-negative");
        }
        Ok(())
    }
}
