//! The pose energy: for every scoring pixel, the Mahalanobis distance from
//! its transformed camera point to the nearest mode of its leaves.

use nalgebra::{Matrix3, Matrix3x6, Vector3, Vector6};

use super::prepare::PreparedFrame;
use crate::geom::{hat, RigidTransform};

/// Nearest mode (lowest index on ties) of pixel `i` to the world point `x`.
#[inline]
fn nearest_mode(frame: &PreparedFrame, i: u32, x: &Vector3<f64>) -> Option<(u32, f64)> {
    let mut best: Option<(u32, f64)> = None;
    for (k, m) in frame.modes(i).iter().enumerate() {
        let d = m.mahalanobis(x);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((k as u32, d));
        }
    }
    best
}

/// `E(H) = Σᵢ minₖ ‖Σₖ^(-1/2) (H·xᵢ − μₖ)‖`; pixels without modes add
/// `no_mode_penalty`.
pub fn score_hypothesis(h: &RigidTransform, frame: &PreparedFrame, pixels: &[u32], no_mode_penalty: f64) -> f64 {
    pixels
        .iter()
        .map(|&i| match nearest_mode(frame, i, &h.transform_point(frame.camera_point(i))) {
            Some((_, d)) => d,
            None => no_mode_penalty,
        })
        .sum()
}

/// The mode each pixel is nearest to under `h`.
pub fn assign_modes(h: &RigidTransform, frame: &PreparedFrame, pixels: &[u32]) -> Vec<Option<u32>> {
    pixels
        .iter()
        .map(|&i| nearest_mode(frame, i, &h.transform_point(frame.camera_point(i))).map(|(k, _)| k))
        .collect()
}

/// Energy with each pixel's mode fixed by `assignment`.
pub fn frozen_energy(
    h: &RigidTransform,
    frame: &PreparedFrame,
    pixels: &[u32],
    assignment: &[Option<u32>],
    no_mode_penalty: f64,
) -> f64 {
    pixels
        .iter()
        .zip(assignment)
        .map(|(&i, a)| match a {
            Some(k) => frame.modes(i)[*k as usize].mahalanobis(&h.transform_point(frame.camera_point(i))),
            None => no_mode_penalty,
        })
        .sum()
}

/// Jacobian of `L⁻¹(exp(δξ)·y − μ)` with respect to `δξ = (ω, v)` at zero.
#[inline]
pub(crate) fn residual_jacobian(inv_factor: &Matrix3<f64>, y: &Vector3<f64>) -> Matrix3x6<f64> {
    let mut j = Matrix3x6::zeros();
    j.fixed_view_mut::<3, 3>(0, 0).copy_from(&(inv_factor * -hat(y)));
    j.fixed_view_mut::<3, 3>(0, 3).copy_from(inv_factor);
    j
}

/// Gradient of the frozen energy under the left perturbation
/// `H ← exp(δξ)·H`, at `δξ = 0`, stacked as `(ω, v)`. Pixels sitting exactly
/// on their mode contribute nothing.
pub fn energy_gradient(h: &RigidTransform, frame: &PreparedFrame, pixels: &[u32], assignment: &[Option<u32>]) -> Vector6<f64> {
    let mut g = Vector6::zeros();
    for (&i, a) in pixels.iter().zip(assignment) {
        let Some(k) = a else { continue };
        let mode = &frame.modes(i)[*k as usize];
        let y = h.transform_point(frame.camera_point(i));
        let r = mode.inv_factor * (y - mode.position);
        let n = r.norm();
        if n > 0.0 {
            g += residual_jacobian(&mode.inv_factor, &y).transpose() * (r / n);
        }
    }
    g
}
