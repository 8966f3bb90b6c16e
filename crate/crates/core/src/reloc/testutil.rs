use nalgebra::{Cholesky, Matrix3, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::prepare::{ModeTarget, PreparedFrame, PreparedPixel};
use crate::geom::Pixel;

pub(crate) fn mode_with_cov(position: Vector3<f64>, cov: Matrix3<f64>) -> ModeTarget {
    let l = Cholesky::new(cov).unwrap().l();
    ModeTarget {
        position,
        inv_factor: l.try_inverse().unwrap(),
        colour: [0; 3],
    }
}

/// `n` pixels, each with one to three modes near its camera point, sharing
/// a random full covariance per pixel.
pub(crate) fn random_instance(rng: &mut ChaCha8Rng, n: usize) -> PreparedFrame {
    let points = (0..n)
        .map(|k| {
            let camera = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(0.5..4.0),
            );
            let a = Matrix3::from_fn(|_, _| rng.random_range(-0.2..0.2));
            let cov = a * a.transpose() + Matrix3::identity() * 0.01;
            let modes = (0..rng.random_range(1..4))
                .map(|_| mode_with_cov(camera + Vector3::from_fn(|_, _| rng.random_range(-0.3..0.3)), cov))
                .collect();
            PreparedPixel {
                pixel: Pixel::new(k as u32, 0),
                camera,
                colour: [0; 3],
                modes,
            }
        })
        .collect();
    PreparedFrame::from_parts(points)
}

/// Camera points spread over a 320×240 view at 1–4 m, each with one exact
/// mode at `pose · x` (σ = 1 cm) and matching colour.
pub(crate) fn perfect_instance(rng: &mut ChaCha8Rng, pose: &crate::geom::RigidTransform, n: usize) -> PreparedFrame {
    let k = crate::geom::CameraIntrinsics::new(292.5, 292.5, 160.0, 120.0).unwrap();
    let points = (0..n)
        .map(|i| {
            let (u, v) = (rng.random_range(0..320u32), rng.random_range(0..240u32));
            let camera = k.unproject(u as f64, v as f64, rng.random_range(1.0..4.0));
            let colour = [rng.random(), rng.random(), rng.random()];
            PreparedPixel {
                pixel: Pixel::new(u, v + 240 * i as u32),
                camera,
                colour,
                modes: vec![ModeTarget::isotropic(pose.transform_point(&camera), 0.01, colour)],
            }
        })
        .collect();
    PreparedFrame::from_parts(points)
}
