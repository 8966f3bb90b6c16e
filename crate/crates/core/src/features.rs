//! Depth and depth-adaptive RGB pixel-comparison features.
//!
//! Every feature compares the image at a pixel `p` with the image at a probe
//! pixel `p + δ / D(p)`. Dividing the offset by the centre depth makes the
//! probe cover a roughly constant metric footprint, so responses are stable
//! as the camera moves towards or away from a surface.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::RgbdFrame;
use crate::geom::Pixel;

pub const FEATURE_COUNT: usize = 256;
pub const DEPTH_FEATURE_COUNT: usize = 128;
pub const RGB_FEATURE_COUNT: usize = FEATURE_COUNT - DEPTH_FEATURE_COUNT;

/// Spacing of the pixel grid used for adaptation examples.
pub const GRID_SPACING: u32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ColourChannel {
    Red = 0,
    Green = 1,
    Blue = 2,
}

impl ColourChannel {
    pub fn from_index(i: u8) -> Option<Self> {
        match i {
            0 => Some(Self::Red),
            1 => Some(Self::Green),
            2 => Some(Self::Blue),
            _ => None,
        }
    }
}

/// Parameters of a single feature. Offsets are in pixel·metres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum FeatureParams {
    Depth { delta: [f64; 2] },
    DaRgb { delta: [f64; 2], channel: ColourChannel },
}

impl FeatureParams {
    pub fn delta(&self) -> [f64; 2] {
        match *self {
            FeatureParams::Depth { delta } | FeatureParams::DaRgb { delta, .. } => delta,
        }
    }
}

/// Per-axis bounds for the offset `δ`, in pixel·metres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OffsetRange {
    pub min: f64,
    pub max: f64,
}

impl Default for OffsetRange {
    fn default() -> Self {
        Self {
            min: -130.0,
            max: 130.0,
        }
    }
}

impl OffsetRange {
    pub fn symmetric(half_width: f64) -> Self {
        Self {
            min: -half_width,
            max: half_width,
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.min && v <= self.max
    }
}

/// The 256 feature parameters shared by every tree: 128 depth features
/// followed by 128 DA-RGB features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureBank {
    params: Vec<FeatureParams>,
}

impl FeatureBank {
    /// Validates the 128 + 128 layout.
    pub fn from_params(params: Vec<FeatureParams>) -> Result<Self> {
        if params.len() != FEATURE_COUNT {
            return Err(Error::Format(format!(
                "feature bank must hold {FEATURE_COUNT} entries, got {}",
                params.len()
            )));
        }
        let layout_ok = params.iter().enumerate().all(|(i, p)| {
            matches!(
                (i < DEPTH_FEATURE_COUNT, p),
                (true, FeatureParams::Depth { .. }) | (false, FeatureParams::DaRgb { .. })
            )
        });
        if !layout_ok {
            return Err(Error::Format(
                "feature bank must list depth features before DA-RGB features".into(),
            ));
        }
        Ok(Self { params })
    }

    pub fn params(&self) -> &[FeatureParams] {
        &self.params
    }
}

pub fn generate_feature_bank(seed: u64, offset_range: OffsetRange) -> Result<FeatureBank> {
    if !(offset_range.min < offset_range.max) {
        return Err(Error::InvalidConfig(format!(
            "empty offset range [{}, {}]",
            offset_range.min, offset_range.max
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let delta = |rng: &mut ChaCha8Rng| {
        [
            rng.random_range(offset_range.min..=offset_range.max),
            rng.random_range(offset_range.min..=offset_range.max),
        ]
    };
    let mut params = Vec::with_capacity(FEATURE_COUNT);
    for _ in 0..DEPTH_FEATURE_COUNT {
        params.push(FeatureParams::Depth { delta: delta(&mut rng) });
    }
    for _ in 0..RGB_FEATURE_COUNT {
        let d = delta(&mut rng);
        let channel = ColourChannel::from_index(rng.random_range(0..3)).unwrap_or(ColourChannel::Red);
        params.push(FeatureParams::DaRgb { delta: d, channel });
    }
    Ok(FeatureBank { params })
}

/// Feature responses at one pixel. `valid` is false when the centre pixel
/// has no depth, in which case `values` are all zero.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: [f32; FEATURE_COUNT],
    pub valid: bool,
}

impl FeatureVector {
    pub fn invalid() -> Self {
        Self {
            values: [0.0; FEATURE_COUNT],
            valid: false,
        }
    }

    pub fn from_values(values: [f32; FEATURE_COUNT]) -> Self {
        Self { values, valid: true }
    }
}

#[inline]
fn probe(frame: &RgbdFrame, p: Pixel, centre_depth: f64, delta: [f64; 2]) -> (u32, u32) {
    let max_x = (frame.width() - 1) as f64;
    let max_y = (frame.height() - 1) as f64;
    let x = (p.x as f64 + delta[0] / centre_depth).round().clamp(0.0, max_x);
    let y = (p.y as f64 + delta[1] / centre_depth).round().clamp(0.0, max_y);
    (x as u32, y as u32)
}

#[inline]
fn evaluate(frame: &RgbdFrame, p: Pixel, d: f64, params: &FeatureParams) -> f64 {
    match *params {
        FeatureParams::Depth { delta } => {
            let (qx, qy) = probe(frame, p, d, delta);
            // A missing probe depth reads as 0.
            d - frame.depth.at(qx, qy)
        }
        FeatureParams::DaRgb { delta, channel } => {
            let (qx, qy) = probe(frame, p, d, delta);
            let c = channel as usize;
            frame.colour.at(p.x, p.y)[c] as f64 - frame.colour.at(qx, qy)[c] as f64
        }
    }
}

/// Evaluates one feature at `p`. Probes falling outside the image are
/// clamped to the border.
pub fn compute_feature(frame: &RgbdFrame, p: Pixel, params: &FeatureParams) -> Result<f64> {
    match frame.depth.get(p.x, p.y) {
        Some(d) if d > 0.0 => Ok(evaluate(frame, p, d, params)),
        _ => Err(Error::InvalidDepth { x: p.x, y: p.y }),
    }
}

pub fn compute_feature_vector(frame: &RgbdFrame, p: Pixel, bank: &FeatureBank) -> FeatureVector {
    let d = match frame.depth.get(p.x, p.y) {
        Some(d) if d > 0.0 => d,
        _ => return FeatureVector::invalid(),
    };
    let mut values = [0.0f32; FEATURE_COUNT];
    for (v, params) in values.iter_mut().zip(bank.params()) {
        *v = evaluate(frame, p, d, params) as f32;
    }
    FeatureVector { values, valid: true }
}

/// Feature vectors for many pixels, computed in parallel.
pub fn compute_feature_vectors(frame: &RgbdFrame, pixels: &[Pixel], bank: &FeatureBank) -> Vec<FeatureVector> {
    pixels
        .par_iter()
        .map(|&p| compute_feature_vector(frame, p, bank))
        .collect()
}

/// Pixels `(4i, 4j)` inside the image that carry a valid depth.
pub fn sample_grid_pixels(frame: &RgbdFrame) -> Vec<Pixel> {
    let mut out = Vec::new();
    for y in (0..frame.height()).step_by(GRID_SPACING as usize) {
        for x in (0..frame.width()).step_by(GRID_SPACING as usize) {
            if frame.depth.is_valid(x, y) {
                out.push(Pixel::new(x, y));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::{ColourImage, DepthImage};
    use crate::geom::CameraIntrinsics;
    use proptest::prelude::*;
    use rand::Rng;

    fn frame_from(depth: DepthImage, colour: ColourImage) -> RgbdFrame {
        RgbdFrame::new(colour, depth, CameraIntrinsics::seven_scenes(), None, 0)
    }

    fn constant_frame(w: u32, h: u32, d: f64) -> RgbdFrame {
        frame_from(DepthImage::filled(w, h, d), ColourImage::filled(w, h, [40, 90, 200]))
    }

    /// Depth and colour vary pseudo-randomly per pixel.
    fn textured_frame(w: u32, h: u32, seed: u64) -> RgbdFrame {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut depth = DepthImage::new(w, h);
        let mut colour = ColourImage::new(w, h);
        for y in 0..h {
            for x in 0..w {
                if rng.random_bool(0.9) {
                    depth.set(x, y, rng.random_range(0.5..4.0));
                }
                colour.set(x, y, [rng.random(), rng.random(), rng.random()]);
            }
        }
        frame_from(depth, colour)
    }

    #[test]
    fn bank_is_deterministic_per_seed() {
        let a = generate_feature_bank(42, OffsetRange::default()).unwrap();
        let b = generate_feature_bank(42, OffsetRange::default()).unwrap();
        assert_eq!(a, b);
        let c = generate_feature_bank(1, OffsetRange::default()).unwrap();
        let d = generate_feature_bank(2, OffsetRange::default()).unwrap();
        assert!(c.params().iter().zip(d.params()).any(|(x, y)| x.delta() != y.delta()));
    }

    #[test]
    fn bank_layout_is_depth_then_rgb() {
        let bank = generate_feature_bank(3, OffsetRange::default()).unwrap();
        assert_eq!(bank.params().len(), FEATURE_COUNT);
        assert!(bank.params()[..128].iter().all(|p| matches!(p, FeatureParams::Depth { .. })));
        assert!(bank.params()[128..].iter().all(|p| matches!(p, FeatureParams::DaRgb { .. })));
        assert!(FeatureBank::from_params(bank.params().to_vec()).is_ok());
        let mut swapped = bank.params().to_vec();
        swapped.swap(0, 200);
        assert!(FeatureBank::from_params(swapped).is_err());
    }

    #[test]
    fn deltas_stay_within_range_over_many_seeds() {
        let range = OffsetRange { min: -37.5, max: 80.0 };
        for seed in 0..1000 {
            let bank = generate_feature_bank(seed, range).unwrap();
            for p in bank.params() {
                let [dx, dy] = p.delta();
                assert!(range.contains(dx) && range.contains(dy), "seed {seed}: {dx},{dy}");
            }
        }
    }

    #[test]
    fn empty_offset_range_rejected() {
        assert!(generate_feature_bank(0, OffsetRange { min: 1.0, max: 1.0 }).is_err());
    }

    #[test]
    fn zero_offset_gives_zero_response() {
        let frame = textured_frame(32, 24, 5);
        let p = (0..24)
            .flat_map(|y| (0..32).map(move |x| Pixel::new(x, y)))
            .find(|p| frame.depth.is_valid(p.x, p.y))
            .unwrap();
        let depth = FeatureParams::Depth { delta: [0.0, 0.0] };
        let rgb = FeatureParams::DaRgb { delta: [0.0, 0.0], channel: ColourChannel::Green };
        assert_eq!(compute_feature(&frame, p, &depth).unwrap(), 0.0);
        assert_eq!(compute_feature(&frame, p, &rgb).unwrap(), 0.0);
    }

    #[test]
    fn constant_depth_depth_features_vanish() {
        let frame = constant_frame(64, 48, 2.0);
        let bank = generate_feature_bank(9, OffsetRange::default()).unwrap();
        for params in &bank.params()[..DEPTH_FEATURE_COUNT] {
            assert_eq!(compute_feature(&frame, Pixel::new(10, 30), params).unwrap(), 0.0);
        }
    }

    #[test]
    fn depth_step_response() {
        // 1 m on the left half, 3 m on the right half.
        let mut depth = DepthImage::new(40, 20);
        for y in 0..20 {
            for x in 0..40 {
                depth.set(x, y, if x < 20 { 1.0 } else { 3.0 });
            }
        }
        let frame = frame_from(depth, ColourImage::new(40, 20));
        // From (5, 10) at 1 m an offset of 25 px·m lands at x = 30.
        let params = FeatureParams::Depth { delta: [25.0, 0.0] };
        assert_eq!(compute_feature(&frame, Pixel::new(5, 10), &params).unwrap(), -2.0);
    }

    #[test]
    fn missing_probe_depth_reads_as_zero() {
        let mut frame = constant_frame(16, 16, 2.0);
        frame.depth.set(9, 4, 0.0);
        let params = FeatureParams::Depth { delta: [10.0, 0.0] };
        // (4,4) at 2 m probes (9,4).
        assert_eq!(compute_feature(&frame, Pixel::new(4, 4), &params).unwrap(), 2.0);
    }

    #[test]
    fn probe_is_clamped_to_border() {
        let mut frame = constant_frame(16, 16, 1.0);
        frame.depth.set(15, 3, 1.5);
        let params = FeatureParams::Depth { delta: [1000.0, 0.0] };
        assert_eq!(compute_feature(&frame, Pixel::new(2, 3), &params).unwrap(), -0.5);
    }

    #[test]
    fn invalid_centre_is_an_error_and_invalid_vector() {
        let mut frame = constant_frame(8, 8, 1.0);
        frame.depth.set(2, 2, 0.0);
        let params = FeatureParams::Depth { delta: [1.0, 1.0] };
        assert!(compute_feature(&frame, Pixel::new(2, 2), &params).is_err());
        let bank = generate_feature_bank(0, OffsetRange::default()).unwrap();
        assert!(!compute_feature_vector(&frame, Pixel::new(2, 2), &bank).valid);
    }

    #[test]
    fn constant_frame_vector_is_all_zero() {
        let frame = constant_frame(64, 48, 1.7);
        let bank = generate_feature_bank(11, OffsetRange::default()).unwrap();
        let f = compute_feature_vector(&frame, Pixel::new(31, 17), &bank);
        assert!(f.valid);
        assert!(f.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn vector_matches_componentwise_evaluation() {
        let frame = textured_frame(64, 48, 1);
        let bank = generate_feature_bank(12, OffsetRange::symmetric(60.0)).unwrap();
        for p in sample_grid_pixels(&frame) {
            let f = compute_feature_vector(&frame, p, &bank);
            for (i, params) in bank.params().iter().enumerate() {
                assert_eq!(f.values[i], compute_feature(&frame, p, params).unwrap() as f32);
            }
        }
    }

    #[test]
    fn grid_on_full_vga_frame() {
        let frame = constant_frame(640, 480, 1.0);
        assert_eq!(sample_grid_pixels(&frame).len(), 160 * 120);
        let empty = constant_frame(640, 480, 0.0);
        assert!(sample_grid_pixels(&empty).is_empty());
    }

    #[test]
    fn grid_keeps_exactly_valid_points() {
        let frame = textured_frame(50, 37, 3);
        let mut expected = Vec::new();
        for y in 0..37 {
            for x in 0..50 {
                if x % 4 == 0 && y % 4 == 0 && frame.depth.at(x, y) > 0.0 {
                    expected.push(Pixel::new(x, y));
                }
            }
        }
        assert_eq!(sample_grid_pixels(&frame), expected);
    }

    #[test]
    fn translation_covariance_on_constant_depth() {
        // Colour texture shifted by (s, 0) together with the pixel.
        let (w, h, shift) = (96u32, 40u32, 7u32);
        let pattern = |x: u32, y: u32| [(x * 37 % 251) as u8, (y * 11 % 253) as u8, ((x ^ y) * 5 % 256) as u8];
        let mut a = ColourImage::new(w, h);
        let mut b = ColourImage::new(w, h);
        for y in 0..h {
            for x in 0..w {
                a.set(x, y, pattern(x, y));
                b.set(x, y, pattern(x.wrapping_sub(shift) % 1024, y));
            }
        }
        let fa = frame_from(DepthImage::filled(w, h, 2.0), a);
        let fb = frame_from(DepthImage::filled(w, h, 2.0), b);
        let bank = generate_feature_bank(4, OffsetRange::symmetric(20.0)).unwrap();
        // Offsets are at most 10 px at 2 m, so pixels away from the border
        // never clamp.
        for y in 12..28 {
            for x in 20..60 {
                let va = compute_feature_vector(&fa, Pixel::new(x, y), &bank);
                let vb = compute_feature_vector(&fb, Pixel::new(x + shift, y), &bank);
                assert_eq!(va, vb);
            }
        }
    }

    proptest! {
        #[test]
        fn feature_bounds(seed in 0u64..500, px in 0u32..64, py in 0u32..48) {
            let frame = textured_frame(64, 48, seed);
            prop_assume!(frame.depth.is_valid(px, py));
            let bank = generate_feature_bank(seed, OffsetRange::default()).unwrap();
            let f = compute_feature_vector(&frame, Pixel::new(px, py), &bank);
            let depths: Vec<f64> = frame.depth.as_slice().to_vec();
            let (lo, hi) = depths.iter().fold((f64::MAX, f64::MIN), |(lo, hi), &d| (lo.min(d), hi.max(d)));
            for &v in &f.values[..DEPTH_FEATURE_COUNT] {
                prop_assert!((v as f64).abs() <= hi - lo + 1e-6);
            }
            for &v in &f.values[DEPTH_FEATURE_COUNT..] {
                prop_assert!((-255.0..=255.0).contains(&v));
            }
        }
    }
}
