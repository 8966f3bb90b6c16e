use nalgebra::{Matrix6, Vector6};

use super::energy::{assign_modes, frozen_energy, residual_jacobian};
use super::prepare::PreparedFrame;
use super::settings::LmSettings;
use crate::geom::{exp_map, RigidTransform, TwistVector};

const MAX_DAMPING: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct LmOutcome {
    pub transform: RigidTransform,
    pub energy: f64,
    /// Energy at the start and after every accepted step.
    pub history: Vec<f64>,
    pub iterations: usize,
}

/// Normal equations of the iteratively reweighted problem: with weights
/// `1/‖rᵢ‖`, `A = Σ wᵢ JᵢᵀJᵢ` and `g = Σ wᵢ Jᵢᵀrᵢ`, where `g` is the exact
/// energy gradient.
fn normal_equations(
    h: &RigidTransform,
    frame: &PreparedFrame,
    pixels: &[u32],
    assignment: &[Option<u32>],
) -> (Matrix6<f64>, Vector6<f64>) {
    let mut a = Matrix6::zeros();
    let mut g = Vector6::zeros();
    for (&i, k) in pixels.iter().zip(assignment) {
        let Some(k) = k else { continue };
        let mode = &frame.modes(i)[*k as usize];
        let y = h.transform_point(frame.camera_point(i));
        let r = mode.inv_factor * (y - mode.position);
        let n = r.norm();
        if n <= f64::EPSILON {
            continue;
        }
        let j = residual_jacobian(&mode.inv_factor, &y);
        let jt = j.transpose();
        a += jt * j / n;
        g += jt * r / n;
    }
    (a, g)
}

/// Levenberg-Marquardt on the pose energy over `pixels`, stepping in the Lie
/// algebra with `H ← exp(δξ)·H`.
///
/// Mode assignments are frozen while a step is evaluated and re-resolved
/// after each accepted step, so the reported energy never increases. Stops
/// on a short step, a small relative decrease, or the iteration cap, and
/// returns the best pose seen.
pub fn lm_refine(
    h: &RigidTransform,
    frame: &PreparedFrame,
    pixels: &[u32],
    settings: &LmSettings,
    no_mode_penalty: f64,
) -> LmOutcome {
    let mut current = *h;
    let mut assignment = assign_modes(&current, frame, pixels);
    let mut energy = frozen_energy(&current, frame, pixels, &assignment, no_mode_penalty);
    let mut history = vec![energy];
    let mut lambda = settings.initial_damping;
    let mut iterations = 0;

    let (mut a, mut g) = normal_equations(&current, frame, pixels, &assignment);
    while iterations < settings.max_iterations && lambda < MAX_DAMPING {
        iterations += 1;
        if g.norm() == 0.0 {
            break;
        }
        let mut damped = a;
        for d in 0..6 {
            damped[(d, d)] += lambda * (a[(d, d)] + 1e-12);
        }
        let Some(step) = damped.cholesky().map(|c| c.solve(&-g)) else {
            lambda *= 10.0;
            continue;
        };
        if step.norm() < settings.step_tolerance {
            break;
        }
        let candidate = exp_map(&TwistVector::from_vector6(&step)) * current;
        let trial = frozen_energy(&candidate, frame, pixels, &assignment, no_mode_penalty);
        if trial < energy {
            current = candidate;
            lambda = (lambda / 10.0).max(1e-12);
            assignment = assign_modes(&current, frame, pixels);
            // Re-resolving can only lower the energy further.
            let next = frozen_energy(&current, frame, pixels, &assignment, no_mode_penalty);
            let decrease = energy - next;
            energy = next;
            history.push(energy);
            if decrease <= settings.energy_tolerance * energy.max(f64::MIN_POSITIVE) {
                break;
            }
            (a, g) = normal_equations(&current, frame, pixels, &assignment);
        } else {
            lambda *= 10.0;
        }
    }
    LmOutcome {
        transform: current,
        energy,
        history,
        iterations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{pose_error, Pixel};
    use crate::reloc::energy::score_hypothesis;
    use crate::reloc::prepare::{ModeTarget, PreparedPixel};
    use crate::reloc::testutil::random_instance;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pixel(camera: Vector3<f64>, world: Vector3<f64>) -> PreparedPixel {
        PreparedPixel {
            pixel: Pixel::new(0, 0),
            camera,
            colour: [0; 3],
            modes: vec![ModeTarget::isotropic(world, 1.0, [0; 3])],
        }
    }

    #[test]
    fn minimum_is_left_unchanged() {
        let f = PreparedFrame::from_parts(vec![
            pixel(Vector3::new(0.0, 0.0, 1.0), Vector3::new(0.0, 0.0, 1.0)),
            pixel(Vector3::new(1.0, 0.0, 2.0), Vector3::new(1.0, 0.0, 2.0)),
            pixel(Vector3::new(0.0, 1.0, 3.0), Vector3::new(0.0, 1.0, 3.0)),
        ]);
        let out = lm_refine(&RigidTransform::identity(), &f, &[0, 1, 2], &LmSettings::default(), 100.0);
        let err = pose_error(&out.transform, &RigidTransform::identity());
        assert!(err.translational < 1e-9 && err.angular < 1e-9);
        assert_eq!(out.energy, 0.0);
    }

    #[test]
    fn translation_offset_is_recovered() {
        let world = [Vector3::new(0.0, 0.0, 2.0), Vector3::new(1.0, 0.0, 2.5), Vector3::new(0.0, 1.0, 3.0), Vector3::new(-1.0, 0.5, 2.0)];
        let f = PreparedFrame::from_parts(world.iter().map(|w| pixel(*w, *w)).collect());
        let start = RigidTransform::from_translation(Vector3::new(0.1, 0.0, 0.0));
        let settings = LmSettings { max_iterations: 100, ..Default::default() };
        let out = lm_refine(&start, &f, &[0, 1, 2, 3], &settings, 100.0);
        let err = pose_error(&out.transform, &RigidTransform::identity());
        assert!(err.translational < 1e-6 && err.angular < 1e-4, "{err:?}");
        assert!(out.energy < 1e-5);
    }

    #[test]
    fn single_mode_point_converges_onto_the_mode() {
        let f = PreparedFrame::from_parts(vec![pixel(Vector3::new(0.0, 0.0, 2.0), Vector3::new(0.0, 0.0, 2.0))]);
        let start = RigidTransform::from_translation(Vector3::new(0.1, 0.0, 0.0));
        let settings = LmSettings { max_iterations: 100, ..Default::default() };
        let out = lm_refine(&start, &f, &[0], &settings, 100.0);
        assert!((out.transform.transform_point(&Vector3::new(0.0, 0.0, 2.0)) - Vector3::new(0.0, 0.0, 2.0)).norm() < 1e-6);
    }

    #[test]
    fn energy_never_increases() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..100 {
            let f = random_instance(&mut rng, 30);
            let pixels: Vec<u32> = (0..30).collect();
            let start = exp_map(&TwistVector::from_vector6(&Vector6::from_fn(|_, _| rng.random_range(-0.2..0.2))));
            let e0 = score_hypothesis(&start, &f, &pixels, 100.0);
            let out = lm_refine(&start, &f, &pixels, &LmSettings::default(), 100.0);
            assert_eq!(out.history[0], e0);
            assert!(out.history.windows(2).all(|w| w[1] <= w[0]));
            assert!(out.energy <= e0);
            let rescored = score_hypothesis(&out.transform, &f, &pixels, 100.0);
            assert!((rescored - out.energy).abs() <= 1e-9 * out.energy.max(1.0));
        }
    }
}
