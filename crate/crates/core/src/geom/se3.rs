use std::fmt;
use std::ops::Mul;

use nalgebra::{Matrix3, Matrix4, Rotation3, Unit, Vector3, Vector6, SVD};

use super::ROTATION_TOLERANCE;
use crate::error::{Error, Result};

/// Below this rotation angle the closed-form coefficients switch to their
/// Taylor expansions.
const SMALL_ANGLE: f64 = 1e-6;

/// A proper rigid transform `x -> R x + t`.
///
/// Poses are always camera-to-world: applying a pose to a camera-space point
/// yields its world-space position.
#[derive(Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a transform, checking that `rotation` is orthonormal with
    /// determinant +1.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if !is_rotation(&rotation) {
            return Err(Error::DegenerateConfiguration("matrix is not a proper rotation"));
        }
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::DegenerateConfiguration("non-finite translation"));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    /// Builds a transform from a rotation matrix that may carry small
    /// numerical drift, projecting it onto SO(3) first when needed.
    pub fn from_approximate(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if is_rotation(&rotation) {
            return Self::new(rotation, translation);
        }
        Self::new(nearest_rotation(&rotation)?, translation)
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64, translation: Vector3<f64>) -> Self {
        let rotation = Rotation3::from_axis_angle(&Unit::new_normalize(*axis), angle);
        Self {
            rotation: *rotation.matrix(),
            translation,
        }
    }

    /// Camera-to-world pose of a camera at `eye` looking at `target`, with the
    /// camera's y axis pointing as close to `down` as possible.
    pub fn look_at(eye: &Vector3<f64>, target: &Vector3<f64>, down: &Vector3<f64>) -> Result<Self> {
        let z = target - eye;
        if z.norm() < 1e-12 {
            return Err(Error::DegenerateConfiguration("look_at target coincides with eye"));
        }
        let z = z.normalize();
        let x = down.cross(&z);
        if x.norm() < 1e-9 {
            return Err(Error::DegenerateConfiguration("viewing direction parallel to down vector"));
        }
        let x = x.normalize();
        let y = z.cross(&x);
        let rotation = Matrix3::from_columns(&[x, y, z]);
        Self::new(rotation, *eye)
    }

    /// Row-major 4×4 homogeneous matrix.
    pub fn from_matrix4(m: &Matrix4<f64>) -> Result<Self> {
        let rotation = m.fixed_view::<3, 3>(0, 0).into_owned();
        let translation = m.fixed_view::<3, 1>(0, 3).into_owned();
        Self::new(rotation, translation)
    }

    pub fn to_matrix4(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    #[inline]
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }
}

impl Mul for RigidTransform {
    type Output = RigidTransform;

    fn mul(self, rhs: RigidTransform) -> RigidTransform {
        self.compose(&rhs)
    }
}

impl Mul<&RigidTransform> for &RigidTransform {
    type Output = RigidTransform;

    fn mul(self, rhs: &RigidTransform) -> RigidTransform {
        self.compose(rhs)
    }
}

impl fmt::Debug for RigidTransform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let r = &self.rotation;
        let t = &self.translation;
        write!(
            f,
            "RigidTransform([{:.6} {:.6} {:.6} | {:.6}] [{:.6} {:.6} {:.6} | {:.6}] [{:.6} {:.6} {:.6} | {:.6}])",
            r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x,
            r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y,
            r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z,
        )
    }
}

fn is_rotation(m: &Matrix3<f64>) -> bool {
    if !m.iter().all(|v| v.is_finite()) {
        return false;
    }
    let gram = m.transpose() * m - Matrix3::identity();
    gram.iter().all(|v| v.abs() <= ROTATION_TOLERANCE)
        && (m.determinant() - 1.0).abs() <= ROTATION_TOLERANCE
}

/// Closest proper rotation in the Frobenius sense.
fn nearest_rotation(m: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    let svd = SVD::new(*m, true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::DegenerateConfiguration("svd failed")),
    };
    let d = (u * v_t).determinant().signum();
    Ok(u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * v_t)
}

/// Element of se(3): rotational part `omega` (axis × angle, radians) and
/// translational part `v` (metres).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwistVector {
    pub omega: Vector3<f64>,
    pub v: Vector3<f64>,
}

impl TwistVector {
    pub fn new(omega: Vector3<f64>, v: Vector3<f64>) -> Self {
        Self { omega, v }
    }

    pub fn zero() -> Self {
        Self::new(Vector3::zeros(), Vector3::zeros())
    }

    /// Stacked as `(omega, v)`.
    pub fn from_vector6(x: &Vector6<f64>) -> Self {
        Self::new(
            Vector3::new(x[0], x[1], x[2]),
            Vector3::new(x[3], x[4], x[5]),
        )
    }

    pub fn to_vector6(&self) -> Vector6<f64> {
        Vector6::new(
            self.omega.x, self.omega.y, self.omega.z, self.v.x, self.v.y, self.v.z,
        )
    }

    pub fn is_finite(&self) -> bool {
        self.omega.iter().chain(self.v.iter()).all(|x| x.is_finite())
    }
}

/// Skew-symmetric matrix with `hat(a) * b == a × b`.
#[inline]
pub fn hat(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

pub fn exp_map(xi: &TwistVector) -> RigidTransform {
    let theta = xi.omega.norm();
    let w = hat(&xi.omega);
    let w2 = w * w;
    let (a, b, c) = if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        (1.0 - t2 / 6.0, 0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0)
    } else {
        let (s, co) = theta.sin_cos();
        (
            s / theta,
            (1.0 - co) / (theta * theta),
            (theta - s) / (theta * theta * theta),
        )
    };
    let id = Matrix3::identity();
    let rotation = id + w * a + w2 * b;
    let left_jacobian = id + w * b + w2 * c;
    RigidTransform {
        rotation,
        translation: left_jacobian * xi.v,
    }
}

/// Inverse of [`exp_map`] on the principal branch (rotation angle < π).
///
/// At exactly π the rotation axis sign is ambiguous; a valid twist is still
/// returned but round-tripping is not guaranteed.
pub fn log_map(h: &RigidTransform) -> TwistVector {
    let r = &h.rotation;
    let skew = vee(&(r - r.transpose())) * 0.5;
    let sin_theta = skew.norm();
    let cos_theta = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = sin_theta.atan2(cos_theta);

    let omega = if theta < SMALL_ANGLE {
        skew * (1.0 + theta * theta / 6.0)
    } else if sin_theta > 1e-4 {
        skew * (theta / sin_theta)
    } else {
        // Near π the antisymmetric part vanishes; recover the axis from the
        // symmetric part and its sign from what is left of the skew part.
        let b = (r + Matrix3::identity()) * 0.5;
        let k = (0..3)
            .max_by(|&i, &j| b[(i, i)].total_cmp(&b[(j, j)]))
            .unwrap_or(0);
        let mut axis: Vector3<f64> = b.column(k).into_owned();
        axis /= axis.norm();
        if axis.dot(&skew) < 0.0 {
            axis = -axis;
        }
        axis * theta
    };

    let w = hat(&omega);
    let w2 = w * w;
    let coeff = if theta < SMALL_ANGLE {
        1.0 / 12.0 + theta * theta / 720.0
    } else {
        let (s, c) = theta.sin_cos();
        (1.0 - theta * s / (2.0 * (1.0 - c))) / (theta * theta)
    };
    let v_inv = Matrix3::identity() - w * 0.5 + w2 * coeff;
    TwistVector::new(omega, v_inv * h.translation)
}
