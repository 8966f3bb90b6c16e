//! Rigid-body geometry: SE(3) poses and their Lie algebra, the pinhole
//! camera model, absolute orientation and pose-error metrics.

mod camera;
mod kabsch;
mod metrics;
mod se3;

pub use camera::{back_project, CameraIntrinsics, Pixel};
pub use kabsch::kabsch;
pub use metrics::{pose_error, rotation_angle, PoseError};
pub use se3::{exp_map, hat, log_map, RigidTransform, TwistVector};

/// Tolerance used when checking that a matrix is a proper rotation.
pub const ROTATION_TOLERANCE: f64 = 1e-9;
