use nalgebra::{Matrix3, Vector3};

use crate::adapt::{AdaptState, ModalCluster};
use crate::features::{compute_feature_vectors, sample_grid_pixels};
use crate::forest::RegressionForest;
use crate::frame::RgbdFrame;
use crate::geom::{back_project, Pixel};

/// The parts of a mode that pose estimation reads.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeTarget {
    pub position: Vector3<f64>,
    /// `L⁻¹` for `Σ = L·Lᵀ`.
    pub inv_factor: Matrix3<f64>,
    pub colour: [u8; 3],
}

impl ModeTarget {
    /// Mode with covariance `σ²·I`.
    pub fn isotropic(position: Vector3<f64>, sigma: f64, colour: [u8; 3]) -> Self {
        Self {
            position,
            inv_factor: Matrix3::identity() / sigma,
            colour,
        }
    }

    #[inline]
    pub fn mahalanobis(&self, x: &Vector3<f64>) -> f64 {
        (self.inv_factor * (x - self.position)).norm()
    }
}

impl From<&ModalCluster> for ModeTarget {
    fn from(m: &ModalCluster) -> Self {
        Self {
            position: m.position,
            inv_factor: m.inv_factor,
            colour: m.colour,
        }
    }
}

/// One pixel ready for pose estimation.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedPixel {
    pub pixel: Pixel,
    pub camera: Vector3<f64>,
    pub colour: [u8; 3],
    pub modes: Vec<ModeTarget>,
}

/// The valid grid pixels of a frame with their camera-space points and the
/// modes of every leaf they reach, laid out flat.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedFrame {
    pixels: Vec<Pixel>,
    camera: Vec<Vector3<f64>>,
    colours: Vec<[u8; 3]>,
    mode_start: Vec<u32>,
    modes: Vec<ModeTarget>,
    with_modes: Vec<u32>,
}

impl PreparedFrame {
    /// Computes features at every valid grid pixel, looks up its leaves and
    /// gathers their modes.
    pub fn new(frame: &RgbdFrame, forest: &RegressionForest, state: &AdaptState) -> Self {
        assert_eq!(state.leaf_count(), forest.leaf_count(), "state was built for another forest");
        let grid = sample_grid_pixels(frame);
        let features = compute_feature_vectors(frame, &grid, forest.bank());
        let mut leaves = Vec::with_capacity(forest.tree_count());
        let mut points = Vec::with_capacity(grid.len());
        for (&pixel, f) in grid.iter().zip(&features) {
            let Ok(camera) = back_project(pixel, &frame.depth, &frame.intrinsics) else {
                continue;
            };
            forest.find_leaves_into(f, &mut leaves);
            let modes = leaves
                .iter()
                .flat_map(|&l| state.prediction(l).modes.iter().map(ModeTarget::from))
                .collect();
            points.push(PreparedPixel {
                pixel,
                camera,
                colour: frame.colour.at(pixel.x, pixel.y),
                modes,
            });
        }
        Self::from_parts(points)
    }

    pub fn from_parts(points: Vec<PreparedPixel>) -> Self {
        let mut out = Self {
            pixels: Vec::with_capacity(points.len()),
            camera: Vec::with_capacity(points.len()),
            colours: Vec::with_capacity(points.len()),
            mode_start: vec![0],
            modes: Vec::new(),
            with_modes: Vec::new(),
        };
        for (i, p) in points.into_iter().enumerate() {
            if !p.modes.is_empty() {
                out.with_modes.push(i as u32);
            }
            out.pixels.push(p.pixel);
            out.camera.push(p.camera);
            out.colours.push(p.colour);
            out.modes.extend(p.modes);
            out.mode_start.push(out.modes.len() as u32);
        }
        out
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn pixel(&self, i: u32) -> Pixel {
        self.pixels[i as usize]
    }

    pub fn camera_point(&self, i: u32) -> &Vector3<f64> {
        &self.camera[i as usize]
    }

    pub fn colour(&self, i: u32) -> [u8; 3] {
        self.colours[i as usize]
    }

    #[inline]
    pub fn modes(&self, i: u32) -> &[ModeTarget] {
        let i = i as usize;
        &self.modes[self.mode_start[i] as usize..self.mode_start[i + 1] as usize]
    }

    /// Indices of pixels whose leaves hold at least one mode.
    pub fn pixels_with_modes(&self) -> &[u32] {
        &self.with_modes
    }
}
