//! Grouping test poses by their distance from a training trajectory.

use nalgebra::{Unit, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;

use super::report::NoveltyBin;
use crate::error::{Error, Result};
use crate::geom::{pose_error, PoseError, RigidTransform};

/// Bin bound: translation in metres, rotation in degrees.
pub type BinEdge = (f64, f64);

/// `(5cm, 5°), (10cm, 10°), …, (50cm, 50°)`.
pub fn default_bin_edges() -> Vec<BinEdge> {
    (1..=10).map(|i| (5.0 * i as f64 / 100.0, 5.0 * i as f64)).collect()
}

fn check_edges(edges: &[BinEdge]) -> Result<()> {
    let ok = !edges.is_empty()
        && edges.iter().all(|&(t, r)| t > 0.0 && r > 0.0)
        && edges.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 < w[1].1);
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidConfig("novelty bin edges must be positive and strictly increasing".into()))
    }
}

/// Offset of `pose` from the closest training pose, where closeness is
/// `max(t / t₀, r / r₀)` for the first edge `(t₀, r₀)`.
pub fn nearest_training_offset(pose: &RigidTransform, training: &[RigidTransform], unit: BinEdge) -> Option<PoseError> {
    training
        .iter()
        .map(|t| pose_error(pose, t))
        .min_by(|a, b| {
            let ka = (a.translational / unit.0).max(a.angular / unit.1);
            let kb = (b.translational / unit.0).max(b.angular / unit.1);
            ka.total_cmp(&kb)
        })
}

/// Index of the first bin containing `offset`; `edges.len()` means overflow.
pub fn bin_index(offset: &PoseError, edges: &[BinEdge]) -> usize {
    edges
        .iter()
        .position(|&(t, r)| offset.translational <= t && offset.angular <= r)
        .unwrap_or(edges.len())
}

/// Counts attempts and successes per novelty bin. The last bin collects
/// poses beyond every edge.
pub fn compute_novelty_bins(
    test_poses: &[RigidTransform],
    training: &[RigidTransform],
    successes: &[bool],
    edges: &[BinEdge],
) -> Result<Vec<NoveltyBin>> {
    check_edges(edges)?;
    if test_poses.len() != successes.len() {
        return Err(Error::InvalidConfig("one success flag is needed per test pose".into()));
    }
    if training.is_empty() {
        return Err(Error::DegenerateTrajectory("empty training trajectory".into()));
    }
    let mut bins: Vec<NoveltyBin> = edges
        .iter()
        .map(|&(t, r)| NoveltyBin { max_translation: Some(t), max_rotation: Some(r), attempts: 0, successes: 0 })
        .chain(std::iter::once(NoveltyBin { max_translation: None, max_rotation: None, attempts: 0, successes: 0 }))
        .collect();
    for (pose, &ok) in test_poses.iter().zip(successes) {
        let offset = nearest_training_offset(pose, training, edges[0]).expect("training is non-empty");
        let b = &mut bins[bin_index(&offset, edges)];
        b.attempts += 1;
        b.successes += ok as usize;
    }
    Ok(bins)
}

pub(crate) fn random_unit(rng: &mut impl Rng) -> Unit<Vector3<f64>> {
    loop {
        let v = Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
        if let Some(u) = Unit::try_new(v, 1e-6) {
            return u;
        }
    }
}

/// `base` moved by `translation` metres along a random direction and
/// rotated by `angle_deg` about a random axis through the camera centre.
pub fn perturb_pose(base: &RigidTransform, translation: f64, angle_deg: f64, rng: &mut impl Rng) -> RigidTransform {
    let direction = random_unit(rng);
    let axis = random_unit(rng);
    offset_pose(base, &direction, translation, &axis, angle_deg)
}

/// `base` moved by `translation` metres along `direction` and rotated by
/// `angle_deg` about `axis` (camera frame) through the camera centre.
pub fn offset_pose(
    base: &RigidTransform,
    direction: &Unit<Vector3<f64>>,
    translation: f64,
    axis: &Unit<Vector3<f64>>,
    angle_deg: f64,
) -> RigidTransform {
    let turn = RigidTransform::from_axis_angle(axis, angle_deg.to_radians(), Vector3::zeros());
    let rotated = base.compose(&turn);
    RigidTransform::new(*rotated.rotation(), rotated.translation() + direction.as_ref() * translation)
        .expect("rotation stays orthonormal")
}
