use nalgebra::{Matrix3, Vector3};

use super::SplitParams;
use super::train::TrainingExample;

/// Added to the covariance diagonal before taking the log-determinant, in m².
pub const VARIANCE_REGULARISER: f64 = 1e-9;

fn log_det_regularised(cov: &Matrix3<f64>) -> f64 {
    // Eigenvalues rather than the determinant: near-singular covariances are
    // common (planar or coincident points) and the regulariser must
    // dominate cleanly there.
    cov.symmetric_eigenvalues()
        .iter()
        .map(|&l| (l.max(0.0) + VARIANCE_REGULARISER).ln())
        .sum()
}

/// Log-determinant of the (maximum-likelihood) covariance of the examples'
/// world positions, regularised by `ε·I`. Zero for fewer than two examples.
pub fn spatial_variance(examples: &[TrainingExample]) -> f64 {
    spatial_variance_of(examples.iter().map(|e| &e.world_pos))
}

fn spatial_variance_of<'a>(points: impl Iterator<Item = &'a Vector3<f64>> + Clone) -> f64 {
    let n = points.clone().count();
    if n <= 1 {
        return 0.0;
    }
    let mean = points.clone().sum::<Vector3<f64>>() / n as f64;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - mean;
        cov += d * d.transpose();
    }
    log_det_regularised(&(cov / n as f64))
}

/// Reduction in spatial variance achieved by splitting `examples` with
/// `theta`: `V(S) − Σ_{L,R} |Sᵢ|/|S| · V(Sᵢ)`.
pub fn information_gain(examples: &[TrainingExample], theta: &SplitParams) -> f64 {
    assert!(!examples.is_empty(), "information gain of an empty set");
    let right = examples.iter().filter(|e| theta.goes_right(&e.feature));
    let left = examples.iter().filter(|e| !theta.goes_right(&e.feature));
    let n = examples.len() as f64;
    let n_right = right.clone().count() as f64;
    let n_left = n - n_right;
    spatial_variance(examples)
        - n_left / n * spatial_variance_of(left.map(|e| &e.world_pos))
        - n_right / n * spatial_variance_of(right.map(|e| &e.world_pos))
}

/// Running sums for the covariance of a point set, used by training to
/// evaluate many candidate splits in one pass each.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SpatialStats {
    pub count: usize,
    sum: [f64; 3],
    // xx, xy, xz, yy, yz, zz
    sum_sq: [f64; 6],
}

impl SpatialStats {
    #[inline]
    pub fn add(&mut self, p: &[f64; 3]) {
        self.count += 1;
        self.sum[0] += p[0];
        self.sum[1] += p[1];
        self.sum[2] += p[2];
        self.sum_sq[0] += p[0] * p[0];
        self.sum_sq[1] += p[0] * p[1];
        self.sum_sq[2] += p[0] * p[2];
        self.sum_sq[3] += p[1] * p[1];
        self.sum_sq[4] += p[1] * p[2];
        self.sum_sq[5] += p[2] * p[2];
    }

    pub fn minus(&self, other: &Self) -> Self {
        let mut out = *self;
        out.count -= other.count;
        for i in 0..3 {
            out.sum[i] -= other.sum[i];
        }
        for i in 0..6 {
            out.sum_sq[i] -= other.sum_sq[i];
        }
        out
    }

    pub fn variance(&self) -> f64 {
        if self.count <= 1 {
            return 0.0;
        }
        let n = self.count as f64;
        let m = [self.sum[0] / n, self.sum[1] / n, self.sum[2] / n];
        let s = &self.sum_sq;
        let cxx = s[0] / n - m[0] * m[0];
        let cxy = s[1] / n - m[0] * m[1];
        let cxz = s[2] / n - m[0] * m[2];
        let cyy = s[3] / n - m[1] * m[1];
        let cyz = s[4] / n - m[1] * m[2];
        let czz = s[5] / n - m[2] * m[2];
        log_det_regularised(&Matrix3::new(cxx, cxy, cxz, cxy, cyy, cyz, cxz, cyz, czz))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{FeatureVector, FEATURE_COUNT};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn example(pos: [f64; 3], f0: f32) -> TrainingExample {
        let mut values = [0.0; FEATURE_COUNT];
        values[0] = f0;
        TrainingExample {
            feature: FeatureVector::from_values(values),
            world_pos: Vector3::from(pos),
            colour: [0, 0, 0],
        }
    }

    #[test]
    fn single_example_has_zero_variance() {
        assert_eq!(spatial_variance(&[example([1.0, 2.0, 3.0], 0.0)]), 0.0);
        assert_eq!(spatial_variance(&[]), 0.0);
    }

    #[test]
    fn isotropic_cloud_matches_direct_covariance() {
        // Cube corners at ±σ have covariance exactly σ²·I.
        let s = 0.1;
        let mut ex = Vec::new();
        for &x in &[-s, s] {
            for &y in &[-s, s] {
                for &z in &[-s, s] {
                    ex.push(example([x + 1.0, y - 2.0, z + 0.5], 0.0));
                }
            }
        }
        let expected = 3.0 * (1e-2f64 + 1e-9).ln();
        assert!((spatial_variance(&ex) - expected).abs() < 1e-6);
    }

    #[test]
    fn coincident_points_hit_regulariser_floor() {
        let ex = vec![example([0.3, 0.3, 0.3], 0.0); 5];
        assert!((spatial_variance(&ex) - 3.0 * 1e-9f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn one_sided_split_has_zero_gain() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ex: Vec<_> = (0..30)
            .map(|_| example([rng.random(), rng.random(), rng.random()], rng.random_range(0.0..1.0)))
            .collect();
        assert!(information_gain(&ex, &SplitParams::new(0, -5.0)).abs() < 1e-12);
        assert!(information_gain(&ex, &SplitParams::new(0, 5.0)).abs() < 1e-12);
    }

    #[test]
    fn separating_split_beats_every_random_candidate() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut ex = Vec::new();
        for i in 0..60 {
            let side = (i % 2) as f64;
            let pos = [side + rng.random_range(-0.02..0.02), rng.random_range(-0.02..0.02), rng.random_range(-0.02..0.02)];
            // Feature 0 separates the clusters; the others are noise.
            let mut values = [0.0; FEATURE_COUNT];
            values.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
            values[0] = side as f32 + rng.random_range(0.0..0.5);
            ex.push(TrainingExample { feature: FeatureVector::from_values(values), world_pos: Vector3::from(pos), colour: [0; 3] });
        }
        let separating = information_gain(&ex, &SplitParams::new(0, 1.0));
        assert!(separating > 0.0);
        for _ in 0..512 {
            let phi = rng.random_range(1..FEATURE_COUNT);
            let tau = ex[rng.random_range(0..ex.len())].feature.values[phi];
            assert!(information_gain(&ex, &SplitParams::new(phi, tau)) < separating);
        }
    }

    #[test]
    fn duplicating_the_dataset_preserves_gain() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ex: Vec<_> = (0..40)
            .map(|_| example([rng.random(), rng.random(), rng.random()], rng.random_range(0.0..1.0)))
            .collect();
        let doubled: Vec<_> = ex.iter().chain(ex.iter()).cloned().collect();
        for tau in [0.2f32, 0.5, 0.8] {
            let theta = SplitParams::new(0, tau);
            assert!((information_gain(&ex, &theta) - information_gain(&doubled, &theta)).abs() < 1e-9);
        }
    }

    #[test]
    fn running_sums_agree_with_two_pass_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        // Two or three points give a rank-deficient covariance whose log-det
        // is dominated by the 1e-9 regulariser, so one-pass rounding shows.
        for (n, tol) in [(2usize, 1e-4), (3, 1e-4), (10, 1e-8), (100, 1e-8)] {
            let ex: Vec<_> = (0..n)
                .map(|_| example([rng.random_range(-3.0..3.0), rng.random_range(0.0..2.0), rng.random_range(1.0..5.0)], 0.0))
                .collect();
            let mut stats = SpatialStats::default();
            ex.iter().for_each(|e| stats.add(&[e.world_pos.x, e.world_pos.y, e.world_pos.z]));
            assert!((stats.variance() - spatial_variance(&ex)).abs() < tol, "n = {n}");
        }
    }
}
