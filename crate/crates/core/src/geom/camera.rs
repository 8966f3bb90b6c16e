use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::DepthImage;

/// Integer pixel coordinate, `x` along the image width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pixel {
    pub x: u32,
    pub y: u32,
}

impl Pixel {
    pub const fn new(x: u32, y: u32) -> Self {
        Self { x, y }
    }
}

/// Pinhole intrinsics, shared by the registered colour and depth images.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "focal lengths must be positive, got fx={fx}, fy={fy}"
            )));
        }
        if !(cx.is_finite() && cy.is_finite()) {
            return Err(Error::InvalidConfig("principal point must be finite".into()));
        }
        Ok(Self { fx, fy, cx, cy })
    }

    /// Published calibration of the 7-Scenes Kinect depth camera at 640×480.
    pub fn seven_scenes() -> Self {
        Self {
            fx: 585.0,
            fy: 585.0,
            cx: 320.0,
            cy: 240.0,
        }
    }

    /// Same field of view at a resolution scaled by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            fx: self.fx * factor,
            fy: self.fy * factor,
            cx: self.cx * factor,
            cy: self.cy * factor,
        }
    }

    /// `depth · K⁻¹ · (u, v, 1)ᵀ`.
    #[inline]
    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> Vector3<f64> {
        Vector3::new(
            (u - self.cx) * depth / self.fx,
            (v - self.cy) * depth / self.fy,
            depth,
        )
    }

    #[inline]
    pub fn project(&self, p: &Vector3<f64>) -> (f64, f64) {
        (self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
    }
}

/// Back-projects pixel `u` into camera space using its measured depth.
pub fn back_project(u: Pixel, depth: &DepthImage, k: &CameraIntrinsics) -> Result<Vector3<f64>> {
    let d = depth
        .get(u.x, u.y)
        .ok_or(Error::InvalidDepth { x: u.x, y: u.y })?;
    if !(d > 0.0) {
        return Err(Error::InvalidDepth { x: u.x, y: u.y });
    }
    Ok(k.unproject(u.x as f64, u.y as f64, d))
}
