use super::pose::{Pose, Vec3};
use crate::error::{Error, Result};

/// Per-query, per-frame 3D positions with visibility flags, stored
/// query-major: entry `q * frames + t`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectorySet {
    pub num_queries: usize,
    pub frames: usize,
    pub positions: Vec<Vec3>,
    pub visible: Vec<bool>,
}

impl TrajectorySet {
    pub fn new(
        num_queries: usize,
        frames: usize,
        positions: Vec<Vec3>,
        visible: Vec<bool>,
    ) -> Result<Self> {
        let n = num_queries * frames;
        if positions.len() != n || visible.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "trajectory set {num_queries}x{frames} needs {n} entries"
            )));
        }
        for q in 0..num_queries {
            if !visible[q * frames..(q + 1) * frames].iter().any(|&v| v) {
                return Err(Error::InvalidArgument(format!(
                    "query {q} is invisible in every frame"
                )));
            }
        }
        Ok(Self {
            num_queries,
            frames,
            positions,
            visible,
        })
    }

    #[inline]
    pub fn position(&self, query: usize, frame: usize) -> &Vec3 {
        &self.positions[query * self.frames + frame]
    }

    #[inline]
    pub fn is_visible(&self, query: usize, frame: usize) -> bool {
        self.visible[query * self.frames + frame]
    }

    /// Keeps frames `start..end`, dropping queries that become invisible in
    /// every remaining frame. Returns the subset and the retained query ids.
    pub fn restrict_frames(&self, start: usize, end: usize) -> Result<(Self, Vec<usize>)> {
        if start >= end || end > self.frames {
            return Err(Error::InvalidArgument(format!(
                "frame range {start}..{end} outside 0..{}",
                self.frames
            )));
        }
        let mut positions = Vec::new();
        let mut visible = Vec::new();
        let mut kept = Vec::new();
        for q in 0..self.num_queries {
            let row = q * self.frames;
            if !self.visible[row + start..row + end].iter().any(|&v| v) {
                continue;
            }
            kept.push(q);
            positions.extend_from_slice(&self.positions[row + start..row + end]);
            visible.extend_from_slice(&self.visible[row + start..row + end]);
        }
        if kept.is_empty() {
            return Err(Error::NoVisiblePoints);
        }
        let set = Self::new(kept.len(), end - start, positions, visible)?;
        Ok((set, kept))
    }

    pub fn transformed(&self, pose: &Pose) -> Self {
        Self {
            positions: self.positions.iter().map(|p| pose.transform(p)).collect(),
            ..self.clone()
        }
    }
}
