use nalgebra::{Matrix2x3, Vector2};
use serde::{Deserialize, Serialize};

use super::pose::{Pose, Vec3};
use crate::error::{Error, Result};

pub type Pixel = Vector2<f64>;

/// Points at or closer than this camera depth (meters) cannot be projected.
pub const DEPTH_EPSILON: f64 = 1e-6;

/// Pinhole intrinsics in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    /// Square-pixel intrinsics with the principal point at the image centre.
    pub fn centered(width: usize, height: usize, focal: f64) -> Self {
        Self {
            fx: focal,
            fy: focal,
            cx: width as f64 * 0.5,
            cy: height as f64 * 0.5,
        }
    }

    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.fx.is_finite()
            && self.fy.is_finite()
            && (0.0..=width as f64).contains(&self.cx)
            && (0.0..=height as f64).contains(&self.cy);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "intrinsics {self:?} invalid for a {width}x{height} image"
            )))
        }
    }

    /// Camera-frame direction with unit depth through `pixel`.
    #[inline]
    pub fn ray(&self, pixel: &Pixel) -> Vec3 {
        Vec3::new((pixel.x - self.cx) / self.fx, (pixel.y - self.cy) / self.fy, 1.0)
    }

    /// Projects a camera-frame point.
    #[inline]
    pub fn project_camera(&self, pc: &Vec3) -> Result<Pixel> {
        if pc.z <= DEPTH_EPSILON {
            return Err(Error::BehindCamera { depth: pc.z });
        }
        Ok(Pixel::new(
            self.fx * pc.x / pc.z + self.cx,
            self.fy * pc.y / pc.z + self.cy,
        ))
    }

    /// Jacobian of the pixel with respect to the camera-frame point.
    #[inline]
    pub fn projection_jacobian(&self, pc: &Vec3) -> Matrix2x3<f64> {
        let iz = 1.0 / pc.z;
        let iz2 = iz * iz;
        Matrix2x3::new(
            self.fx * iz,
            0.0,
            -self.fx * pc.x * iz2,
            0.0,
            self.fy * iz,
            -self.fy * pc.y * iz2,
        )
    }
}

/// A posed pinhole camera.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraModel {
    pub pose: Pose,
    pub intrinsics: Intrinsics,
}

impl CameraModel {
    pub fn new(pose: Pose, intrinsics: Intrinsics) -> Self {
        Self { pose, intrinsics }
    }

    #[inline]
    pub fn project(&self, point: &Vec3) -> Result<Pixel> {
        self.intrinsics.project_camera(&self.pose.transform(point))
    }

    /// Pixel plus its Jacobian with respect to the world point.
    pub fn project_with_jacobian(&self, point: &Vec3) -> Result<(Pixel, Matrix2x3<f64>)> {
        let pc = self.pose.transform(point);
        let px = self.intrinsics.project_camera(&pc)?;
        Ok((px, self.intrinsics.projection_jacobian(&pc) * self.pose.rotation))
    }

    /// World point at camera depth `depth` along the ray through `pixel`.
    pub fn unproject(&self, pixel: &Pixel, depth: f64) -> Vec3 {
        let pc = self.intrinsics.ray(pixel) * depth;
        self.pose.rotation.transpose() * (pc - self.pose.translation)
    }

    /// World-space ray origin and (unnormalized, unit camera depth) direction.
    pub fn world_ray(&self, pixel: &Pixel) -> (Vec3, Vec3) {
        let rt = self.pose.rotation.transpose();
        (self.pose.center(), rt * self.intrinsics.ray(pixel))
    }

    pub fn depth_of(&self, point: &Vec3) -> f64 {
        self.pose.transform(point).z
    }
}

/// Projects `point` through `camera`; free-function form of [`CameraModel::project`].
pub fn project(point: &Vec3, camera: &CameraModel) -> Result<Pixel> {
    camera.project(point)
}

/// Continuous coordinate of the centre of pixel `(x, y)`.
#[inline]
pub fn pixel_center(x: usize, y: usize) -> Pixel {
    Pixel::new(x as f64 + 0.5, y as f64 + 0.5)
}
