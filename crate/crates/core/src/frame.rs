//! Registered colour + metric depth images.

use crate::geom::{CameraIntrinsics, Pixel, RigidTransform};

/// Metric depth in metres; `0.0` marks a missing measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    width: u32,
    height: u32,
    data: Vec<f64>,
}

impl DepthImage {
    pub fn new(width: u32, height: u32) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: u32, height: u32, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value; width as usize * height as usize],
        }
    }

    pub fn from_vec(width: u32, height: u32, data: Vec<f64>) -> Option<Self> {
        (data.len() == width as usize * height as usize).then_some(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> Option<f64> {
        (x < self.width && y < self.height).then(|| self.data[(y * self.width + x) as usize])
    }

    /// Depth at a pixel known to be in bounds.
    #[inline]
    pub fn at(&self, x: u32, y: u32) -> f64 {
        self.data[(y * self.width + x) as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: f64) {
        let w = self.width;
        self.data[(y * w + x) as usize] = value;
    }

    #[inline]
    pub fn is_valid(&self, x: u32, y: u32) -> bool {
        self.get(x, y).is_some_and(|d| d > 0.0)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// 8-bit RGB image.
#[derive(Debug, Clone, PartialEq)]
pub struct ColourImage {
    width: u32,
    height: u32,
    data: Vec<[u8; 3]>,
}

impl ColourImage {
    pub fn new(width: u32, height: u32) -> Self {
        Self::filled(width, height, [0, 0, 0])
    }

    pub fn filled(width: u32, height: u32, value: [u8; 3]) -> Self {
        Self {
            width,
            height,
            data: vec![value; width as usize * height as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn at(&self, x: u32, y: u32) -> [u8; 3] {
        self.data[(y * self.width + x) as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: [u8; 3]) {
        let w = self.width;
        self.data[(y * w + x) as usize] = value;
    }

    pub fn as_slice(&self) -> &[[u8; 3]] {
        &self.data
    }
}

/// One RGB-D frame with its intrinsics and, when known, its camera-to-world
/// pose.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbdFrame {
    pub colour: ColourImage,
    pub depth: DepthImage,
    pub intrinsics: CameraIntrinsics,
    pub gt_pose: Option<RigidTransform>,
    pub index: usize,
}

impl RgbdFrame {
    /// Panics if the colour and depth dimensions differ.
    pub fn new(
        colour: ColourImage,
        depth: DepthImage,
        intrinsics: CameraIntrinsics,
        gt_pose: Option<RigidTransform>,
        index: usize,
    ) -> Self {
        assert_eq!(
            (colour.width(), colour.height()),
            (depth.width(), depth.height()),
            "colour and depth images must have equal dimensions"
        );
        Self {
            colour,
            depth,
            intrinsics,
            gt_pose,
            index,
        }
    }

    pub fn width(&self) -> u32 {
        self.depth.width()
    }

    pub fn height(&self) -> u32 {
        self.depth.height()
    }

    pub fn contains(&self, p: Pixel) -> bool {
        p.x < self.width() && p.y < self.height()
    }
}
