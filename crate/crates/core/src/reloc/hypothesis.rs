use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::prepare::PreparedFrame;
use super::settings::RansacSettings;
use crate::error::{Error, Result};
use crate::geom::{kabsch, Pixel, RigidTransform};

/// A sampled 2D-to-3D match: a live pixel and one mode of its leaves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    /// Index into the prepared frame.
    pub index: u32,
    pub pixel: Pixel,
    pub camera: Vector3<f64>,
    pub world: Vector3<f64>,
    pub colour: [u8; 3],
    pub mode_colour: [u8; 3],
}

/// Draws a pixel uniformly among those whose leaves hold modes, then one of
/// its modes uniformly.
pub fn sample_correspondence(frame: &PreparedFrame, rng: &mut impl Rng) -> Result<Correspondence> {
    let candidates = frame.pixels_with_modes();
    if candidates.is_empty() {
        return Err(Error::NoModes);
    }
    let i = candidates[rng.random_range(0..candidates.len())];
    let modes = frame.modes(i);
    let mode = &modes[rng.random_range(0..modes.len())];
    Ok(Correspondence {
        index: i,
        pixel: frame.pixel(i),
        camera: *frame.camera_point(i),
        world: mode.position,
        colour: frame.colour(i),
        mode_colour: mode.colour,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Validation {
    Accepted,
    /// The randomly chosen pixel's colour disagrees with its mode.
    ColourMismatch,
    /// Two world points are closer than the minimum pair distance.
    PointsTooClose,
    /// Camera-space and world-space pair distances disagree.
    NotRigid,
}

fn mismatching_channels(a: [u8; 3], b: [u8; 3], tolerance: u8) -> u8 {
    a.iter().zip(b).filter(|(x, y)| x.abs_diff(*y) > tolerance).count() as u8
}

const PAIRS: [(usize, usize); 3] = [(0, 1), (0, 2), (1, 2)];

/// Runs the three hypothesis checks in order. They depend only on the
/// correspondences, so they run before the transform is fitted.
pub fn validate_hypothesis(
    triplet: &[Correspondence; 3],
    settings: &RansacSettings,
    rng: &mut impl Rng,
) -> Validation {
    let c = &triplet[rng.random_range(0..3)];
    if mismatching_channels(c.colour, c.mode_colour, settings.colour_channel_tolerance) > settings.colour_mismatch_max {
        return Validation::ColourMismatch;
    }
    let world_d = PAIRS.map(|(i, j)| (triplet[i].world - triplet[j].world).norm());
    if world_d.iter().any(|&d| d < settings.min_pair_distance) {
        return Validation::PointsTooClose;
    }
    let camera_d = PAIRS.map(|(i, j)| (triplet[i].camera - triplet[j].camera).norm());
    if world_d.iter().zip(&camera_d).any(|(w, c)| (w - c).abs() > settings.rigidity_tolerance) {
        return Validation::NotRigid;
    }
    Validation::Accepted
}

/// A candidate camera-to-world pose with its current energy.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseHypothesis {
    /// Generation task that produced it; breaks energy ties.
    pub id: u32,
    pub transform: RigidTransform,
    pub energy: f64,
    /// Number of pixels `energy` was computed over.
    pub scored_pixels: usize,
    /// The correspondences the transform was fitted to.
    pub triplet: [Correspondence; 3],
}

/// Generator for task `task` of a relocalisation seeded with `seed`. Stream
/// 0 is reserved for the scoring pixel order.
pub(crate) fn task_rng(seed: u64, task: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(task + 1);
    rng
}

fn generate_one(frame: &PreparedFrame, settings: &RansacSettings, seed: u64, task: u32) -> Option<PoseHypothesis> {
    let mut rng = task_rng(seed, task as u64);
    for _ in 0..settings.max_generation_iterations {
        let triplet = [
            sample_correspondence(frame, &mut rng).ok()?,
            sample_correspondence(frame, &mut rng).ok()?,
            sample_correspondence(frame, &mut rng).ok()?,
        ];
        if triplet[0].index == triplet[1].index
            || triplet[0].index == triplet[2].index
            || triplet[1].index == triplet[2].index
        {
            continue;
        }
        if validate_hypothesis(&triplet, settings, &mut rng) != Validation::Accepted {
            continue;
        }
        let Ok(transform) = kabsch(&triplet.map(|c| c.camera), &triplet.map(|c| c.world)) else {
            continue;
        };
        return Some(PoseHypothesis {
            id: task,
            transform,
            energy: f64::INFINITY,
            scored_pixels: 0,
            triplet,
        });
    }
    None
}

/// Runs `max_initial_hypotheses` independent generation tasks, each
/// sampling triplets until one passes the checks or its attempts run out.
/// Task `t` draws from its own generator, so the output does not depend on
/// how tasks are scheduled.
pub fn generate_hypotheses(frame: &PreparedFrame, settings: &RansacSettings, seed: u64) -> Result<Vec<PoseHypothesis>> {
    if frame.pixels_with_modes().is_empty() {
        return Err(Error::NoModes);
    }
    let out: Vec<PoseHypothesis> = (0..settings.max_initial_hypotheses as u32)
        .into_par_iter()
        .filter_map(|t| generate_one(frame, settings, seed, t))
        .collect();
    if out.is_empty() {
        return Err(Error::NoHypotheses);
    }
    Ok(out)
}
