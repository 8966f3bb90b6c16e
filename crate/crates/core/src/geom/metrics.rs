use serde::{Deserialize, Serialize};

use super::RigidTransform;
use nalgebra::Matrix3;

/// Deviation of an estimated pose from ground truth.
///
/// Translation is measured between the camera-to-world translations, i.e.
/// the distance between estimated and true camera centres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseError {
    /// Metres.
    pub translational: f64,
    /// Degrees, in `[0, 180]`.
    pub angular: f64,
}

impl PoseError {
    pub fn within(&self, max_translation: f64, max_angle_deg: f64) -> bool {
        self.translational <= max_translation && self.angular <= max_angle_deg
    }
}

/// Rotation angle of `r` in radians via the trace formula.
pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0).acos()
}

pub fn pose_error(estimate: &RigidTransform, ground_truth: &RigidTransform) -> PoseError {
    let translational = (estimate.translation() - ground_truth.translation()).norm();
    let relative = estimate.rotation() * ground_truth.rotation().transpose();
    PoseError {
        translational,
        angular: rotation_angle(&relative).to_degrees(),
    }
}
