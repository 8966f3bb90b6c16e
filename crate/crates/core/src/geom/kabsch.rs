use nalgebra::{Matrix3, Vector3, SVD};

use super::RigidTransform;
use crate::error::{Error, Result};

/// Least-squares rigid transform `H` minimising `Σ ‖H·cᵢ − wᵢ‖²`.
///
/// The rotation is taken from the SVD of the 3×3 cross-covariance, with the
/// determinant-sign correction so the result is always a proper rotation.
/// Fails when either point set is collinear or coincident (cross-covariance
/// rank below 2).
pub fn kabsch(camera_points: &[Vector3<f64>], world_points: &[Vector3<f64>]) -> Result<RigidTransform> {
    if camera_points.len() != world_points.len() {
        return Err(Error::DegenerateConfiguration("point lists differ in length"));
    }
    if camera_points.len() < 3 {
        return Err(Error::DegenerateConfiguration("kabsch needs at least three point pairs"));
    }
    let n = camera_points.len() as f64;
    let c_mean = camera_points.iter().sum::<Vector3<f64>>() / n;
    let w_mean = world_points.iter().sum::<Vector3<f64>>() / n;

    let mut cov = Matrix3::zeros();
    for (c, w) in camera_points.iter().zip(world_points) {
        cov += (c - c_mean) * (w - w_mean).transpose();
    }

    let svd = SVD::new(cov, true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::DegenerateConfiguration("svd failed")),
    };
    let mut s = svd.singular_values;
    s.as_mut_slice().sort_by(|a, b| b.total_cmp(a));
    if !(s[0] > 1e-18) || s[1] <= 1e-10 * s[0] {
        return Err(Error::DegenerateConfiguration("collinear or coincident points"));
    }

    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let rotation = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose();
    let translation = w_mean - rotation * c_mean;
    RigidTransform::from_approximate(rotation, translation)
}

/// Sum of squared alignment residuals.
#[cfg(test)]
pub(crate) fn residual(h: &RigidTransform, camera: &[Vector3<f64>], world: &[Vector3<f64>]) -> f64 {
    camera
        .iter()
        .zip(world)
        .map(|(c, w)| (h.transform_point(c) - w).norm_squared())
        .sum()
}
