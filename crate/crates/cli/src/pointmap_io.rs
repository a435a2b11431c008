//! JSON pointmap files, the interchange format of `refine` and `export`.

use std::fs;
use std::path::Path;

use dino4d_core::geometry::{Pointmap, Vec3};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Row-major points (f32 precision) with a 0/1 validity mask.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointmapFile {
    pub width: usize,
    pub height: usize,
    pub source_frame: usize,
    pub target_time: usize,
    pub points: Vec<[f32; 3]>,
    pub valid: Vec<u8>,
}

impl PointmapFile {
    pub fn from_pointmap(pm: &Pointmap) -> Self {
        Self {
            width: pm.width,
            height: pm.height,
            source_frame: pm.source_frame,
            target_time: pm.target_time,
            points: pm.points.iter().map(|p| [p.x as f32, p.y as f32, p.z as f32]).collect(),
            valid: pm.valid.iter().map(|&v| v as u8).collect(),
        }
    }

    pub fn to_pointmap(&self) -> CliResult<Pointmap> {
        if self.valid.iter().any(|&v| v > 1) {
            return Err(CliError::Runtime("pointmap validity flags must be 0 or 1".into()));
        }
        let points = self
            .points
            .iter()
            .map(|p| Vec3::new(p[0] as f64, p[1] as f64, p[2] as f64))
            .collect();
        let valid = self.valid.iter().map(|&v| v == 1).collect();
        Ok(Pointmap::new(
            self.width,
            self.height,
            points,
            valid,
            self.source_frame,
            self.target_time,
        )?)
    }
}

pub fn write_pointmap(path: &Path, pm: &Pointmap) -> CliResult<()> {
    fs::write(path, serde_json::to_vec(&PointmapFile::from_pointmap(pm))?)?;
    Ok(())
}

pub fn read_pointmap(path: &Path) -> CliResult<Pointmap> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Runtime(format!("cannot read pointmap {}: {e}", path.display())))?;
    let file: PointmapFile = serde_json::from_str(&text).map_err(|e| {
        CliError::Runtime(format!(
            "pointmap {}: line {}, column {}: {e}",
            path.display(),
            e.line(),
            e.column()
        ))
    })?;
    file.to_pointmap()
}
