use super::pose::{Pose, Vec3};
use crate::error::{Error, Result};

/// What a pointmap describes, derived from its frame tags.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PointmapRole {
    /// Frame `j` geometry evaluated at its own time.
    Reconstruction,
    /// Pixels of frame `i` placed at a later time `j`.
    Tracking,
    /// Pixels of a frame placed at an earlier time.
    Backward,
}

/// Dense `width x height` grid of 3D points with a validity mask.
///
/// Points are stored row-major. `source_frame` is the frame whose pixels the
/// grid indexes and `target_time` the time at which they are placed.
#[derive(Clone, Debug, PartialEq)]
pub struct Pointmap {
    pub width: usize,
    pub height: usize,
    pub points: Vec<Vec3>,
    pub valid: Vec<bool>,
    pub source_frame: usize,
    pub target_time: usize,
}

impl Pointmap {
    pub fn new(
        width: usize,
        height: usize,
        points: Vec<Vec3>,
        valid: Vec<bool>,
        source_frame: usize,
        target_time: usize,
    ) -> Result<Self> {
        let n = width * height;
        if points.len() != n || valid.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "pointmap {width}x{height} needs {n} entries, got {} points / {} flags",
                points.len(),
                valid.len()
            )));
        }
        if points
            .iter()
            .zip(&valid)
            .any(|(p, &v)| v && !p.iter().all(|c| c.is_finite()))
        {
            return Err(Error::InvalidArgument("valid point with non-finite coordinate".into()));
        }
        Ok(Self {
            width,
            height,
            points,
            valid,
            source_frame,
            target_time,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    pub fn role(&self) -> PointmapRole {
        use std::cmp::Ordering::*;
        match self.source_frame.cmp(&self.target_time) {
            Equal => PointmapRole::Reconstruction,
            Less => PointmapRole::Tracking,
            Greater => PointmapRole::Backward,
        }
    }

    pub fn num_valid(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn valid_points(&self) -> Vec<Vec3> {
        self.points
            .iter()
            .zip(&self.valid)
            .filter_map(|(p, &v)| v.then_some(*p))
            .collect()
    }

    /// Applies a rigid transform to every point.
    pub fn transformed(&self, pose: &Pose) -> Self {
        Self {
            points: self.points.iter().map(|p| pose.transform(p)).collect(),
            ..self.clone()
        }
    }

    pub fn same_shape(&self, other: &Pointmap) -> bool {
        self.width == other.width && self.height == other.height
    }
}
