use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::json;

use super::energy::score_hypothesis;
use super::hypothesis::{generate_hypotheses, PoseHypothesis};
use super::lm::lm_refine;
use super::prepare::PreparedFrame;
use super::settings::RansacSettings;
use crate::adapt::AdaptState;
use crate::error::{Error, Result};
use crate::forest::RegressionForest;
use crate::frame::RgbdFrame;
use crate::geom::RigidTransform;

/// Hypotheses alive after one round, best first.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRound {
    /// 0 is the initial cull; later rounds follow each halving.
    pub round: usize,
    /// Size of the cumulative scoring set.
    pub pixels: usize,
    pub hypotheses: Vec<PoseHypothesis>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelocResult {
    pub pose: RigidTransform,
    pub final_energy: f64,
    /// Pixels in the final scoring set.
    pub pixels_scored: usize,
    pub hypotheses_generated: usize,
    /// Refinement rounds run after the initial cull.
    pub rounds: usize,
    pub candidate_trace: Option<Vec<TraceRound>>,
}

impl RelocResult {
    pub fn energy_per_pixel(&self) -> f64 {
        self.final_energy / self.pixels_scored.max(1) as f64
    }
}

fn by_energy(a: &PoseHypothesis, b: &PoseHypothesis) -> std::cmp::Ordering {
    a.energy.total_cmp(&b.energy).then(a.id.cmp(&b.id))
}

/// Scores `hypotheses` on a first batch of pixels, keeps the best
/// `cull_to`, then repeatedly grows the scoring set by a batch, refines
/// every survivor with LM, rescores and drops the worse half until one
/// remains. A lone hypothesis still gets one grow-and-refine round.
///
/// The scoring pixels are a seeded shuffle of all prepared pixels; each
/// round takes the next batch, so the sets are nested.
pub fn preemptive_ransac(
    frame: &PreparedFrame,
    hypotheses: Vec<PoseHypothesis>,
    settings: &RansacSettings,
    seed: u64,
) -> Result<RelocResult> {
    settings.validate()?;
    if hypotheses.is_empty() {
        return Err(Error::NoHypotheses);
    }
    if frame.is_empty() {
        return Err(Error::NoModes);
    }
    let generated = hypotheses.len();
    let mut order: Vec<u32> = (0..frame.len() as u32).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut used = settings.batch_size.min(order.len());
    let penalty = settings.no_mode_penalty;
    let mut alive: Vec<PoseHypothesis> = hypotheses
        .into_par_iter()
        .map(|mut h| {
            h.energy = score_hypothesis(&h.transform, frame, &order[..used], penalty);
            h.scored_pixels = used;
            h
        })
        .collect();
    alive.sort_by(by_energy);
    alive.truncate(settings.cull_to);

    let mut trace = settings.diagnostics.then(Vec::new);
    let record = |trace: &mut Option<Vec<TraceRound>>, round, pixels, alive: &[PoseHypothesis]| {
        if let Some(t) = trace {
            t.push(TraceRound { round, pixels, hypotheses: alive.to_vec() });
        }
    };
    record(&mut trace, 0, used, &alive);

    let mut rounds = 0;
    loop {
        rounds += 1;
        used = (used + settings.batch_size).min(order.len());
        let pixels = &order[..used];
        alive = alive
            .into_par_iter()
            .map(|mut h| {
                let out = lm_refine(&h.transform, frame, pixels, &settings.lm, penalty);
                h.transform = out.transform;
                h.energy = out.energy;
                h.scored_pixels = used;
                h
            })
            .collect();
        alive.sort_by(by_energy);
        let keep = (alive.len() / 2).max(1);
        alive.truncate(keep);
        record(&mut trace, rounds, used, &alive);
        if alive.len() == 1 {
            break;
        }
    }

    let winner = alive.swap_remove(0);
    Ok(RelocResult {
        pose: winner.transform,
        final_energy: winner.energy,
        pixels_scored: winner.scored_pixels,
        hypotheses_generated: generated,
        rounds,
        candidate_trace: trace,
    })
}

/// Estimates the camera-to-world pose of `frame` from the modes in `state`.
pub fn relocalise(
    frame: &RgbdFrame,
    state: &AdaptState,
    forest: &RegressionForest,
    settings: &RansacSettings,
    seed: u64,
) -> Result<RelocResult> {
    settings.validate()?;
    let prepared = PreparedFrame::new(frame, forest, state);
    let hypotheses = generate_hypotheses(&prepared, settings, seed)?;
    preemptive_ransac(&prepared, hypotheses, settings, seed)
}

fn vec3(v: &nalgebra::Vector3<f64>) -> [f64; 3] {
    [v.x, v.y, v.z]
}

/// Writes the candidate trace as JSON lines, one per round, keeping the
/// best `top` hypotheses of each round. Does nothing without a trace.
pub fn write_diagnostics(result: &RelocResult, frame_index: usize, top: usize, mut out: impl Write) -> Result<()> {
    let Some(trace) = &result.candidate_trace else {
        return Ok(());
    };
    for round in trace {
        let hyps: Vec<_> = round
            .hypotheses
            .iter()
            .take(top)
            .map(|h| {
                let m = h.transform.to_matrix4();
                let pose: Vec<f64> = (0..4).flat_map(|r| (0..4).map(move |c| m[(r, c)])).collect();
                json!({
                    "id": h.id,
                    "energy": h.energy,
                    "pose": pose,
                    "correspondences": h.triplet.iter().map(|c| json!({
                        "pixel": [c.pixel.x, c.pixel.y],
                        "camera": vec3(&c.camera),
                        "world": vec3(&c.world),
                    })).collect::<Vec<_>>(),
                })
            })
            .collect();
        let line = json!({
            "frame": frame_index,
            "round": round.round,
            "pixels": round.pixels,
            "survivors": round.hypotheses.len(),
            "hypotheses": hyps,
        });
        serde_json::to_writer(&mut out, &line).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
