use nalgebra::{Matrix3, Matrix4, Rotation3, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Tolerance on `RᵀR = I` and `det R = 1` when validating rotations.
pub const ORTHONORMAL_TOLERANCE: f64 = 1e-9;

/// Rigid transform mapping world coordinates to camera coordinates:
/// `x_cam = rotation * x_world + translation`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Builds a pose, rejecting rotations that are not proper orthonormal.
    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Result<Self> {
        if !is_rotation(&rotation) || !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::NonOrthonormalInput);
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn from_axis_angle(axis: &Vec3, angle: f64, translation: Vec3) -> Self {
        Self {
            rotation: rotation_about(axis, angle),
            translation,
        }
    }

    #[inline]
    pub fn transform(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Camera centre in world coordinates.
    pub fn center(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    /// Re-orthonormalizes the rotation, removing accumulated round-off.
    pub fn renormalized(&self) -> Self {
        let rot = Rotation3::from_matrix_eps(&self.rotation, 1e-15, 64, Rotation3::identity());
        Self {
            rotation: rot.into_inner(),
            translation: self.translation,
        }
    }
}

pub fn is_rotation(r: &Matrix3<f64>) -> bool {
    if !r.iter().all(|v| v.is_finite()) {
        return false;
    }
    let gram = r.transpose() * r - Matrix3::identity();
    gram.amax() <= ORTHONORMAL_TOLERANCE && (r.determinant() - 1.0).abs() <= ORTHONORMAL_TOLERANCE
}

/// `compose_pose(a, b)` applies `b` first, then `a`.
pub fn compose_pose(a: &Pose, b: &Pose) -> Result<Pose> {
    if !is_rotation(&a.rotation) || !is_rotation(&b.rotation) {
        return Err(Error::NonOrthonormalInput);
    }
    Ok(Pose {
        rotation: a.rotation * b.rotation,
        translation: a.rotation * b.translation + a.translation,
    })
}

pub fn invert_pose(a: &Pose) -> Result<Pose> {
    if !is_rotation(&a.rotation) {
        return Err(Error::NonOrthonormalInput);
    }
    let rt = a.rotation.transpose();
    Ok(Pose {
        rotation: rt,
        translation: -(rt * a.translation),
    })
}

/// Rodrigues rotation about `axis` (need not be normalized) by `angle` radians.
pub fn rotation_about(axis: &Vec3, angle: f64) -> Matrix3<f64> {
    let n = axis.norm();
    if n == 0.0 {
        return Matrix3::identity();
    }
    so3_exp(&(axis * (angle / n)))
}

pub fn skew(v: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Exponential map from an axis-angle vector to a rotation matrix.
pub fn so3_exp(omega: &Vec3) -> Matrix3<f64> {
    let theta2 = omega.norm_squared();
    let k = skew(omega);
    let (a, b) = if theta2 < 1e-16 {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        let theta = theta2.sqrt();
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Matrix3::identity() + k * a + k * k * b
}

/// Geodesic angle (radians) between two rotations.
pub fn rotation_angle_between(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let rel = a.transpose() * b;
    let c = ((rel.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    // acos loses precision near zero; use the skew part there.
    let s = 0.5
        * Vec3::new(
            rel[(2, 1)] - rel[(1, 2)],
            rel[(0, 2)] - rel[(2, 0)],
            rel[(1, 0)] - rel[(0, 1)],
        )
        .norm();
    s.atan2(c)
}

/// Rotation whose rows are the camera axes for a camera at `eye` looking at
/// `target`, with image y pointing along world `down`.
pub fn look_at(eye: &Vec3, target: &Vec3, down: &Vec3) -> Pose {
    let forward = (target - eye).normalize();
    let right = down.cross(&forward).normalize();
    let cam_down = forward.cross(&right);
    let rotation = Matrix3::from_rows(&[right.transpose(), cam_down.transpose(), forward.transpose()]);
    Pose {
        rotation,
        translation: -(rotation * eye),
    }
}
