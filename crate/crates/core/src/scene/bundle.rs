//! On-disk scene bundles: `manifest.json` plus flat little-endian arrays.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{generate, SceneConfig, SceneSample};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const BUNDLE_FORMAT: &str = "dino4d-scene-bundle";
pub const BUNDLE_VERSION: u32 = 1;
/// Relative tolerance when checking stored arrays against the regenerated scene.
const STORED_TOLERANCE: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub file: String,
    pub dtype: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub format: String,
    pub version: u32,
    /// `synthetic` for generated scenes; other sources are reserved for dataset adapters.
    pub source: String,
    pub seed: u64,
    pub config: SceneConfig,
    pub arrays: Vec<ArrayEntry>,
    pub files: Vec<String>,
}

enum Data {
    F32(Vec<f32>),
    U8(Vec<u8>),
}

fn arrays(scene: &SceneSample) -> Vec<(&'static str, Vec<usize>, Data)> {
    let c = &scene.config;
    let (t, h, w, q) = (c.frames, c.height, c.width, scene.query_pixels.len());
    let f = |v: f64| v as f32;
    let images = scene.images.iter().flat_map(|im| im.data.iter().map(|&v| f(v))).collect();
    let labels = scene.labels.iter().flat_map(|l| l.labels.iter().copied()).collect();
    let points = scene
        .gt_pointmaps
        .iter()
        .flat_map(|pm| pm.points.iter().flat_map(|p| [f(p.x), f(p.y), f(p.z)]))
        .collect();
    let valid = scene.gt_pointmaps.iter().flat_map(|pm| pm.valid.iter().map(|&v| v as u8)).collect();
    let tr = &scene.gt_trajectories;
    let trajectories = tr.positions.iter().flat_map(|p| [f(p.x), f(p.y), f(p.z)]).collect();
    let visibility = tr.visible.iter().map(|&v| v as u8).collect();
    let queries = scene.query_pixels.iter().flat_map(|&(x, y)| [x as f32, y as f32]).collect();
    let cameras = scene
        .cameras
        .iter()
        .flat_map(|cam| {
            let r = &cam.pose.rotation;
            let tr = &cam.pose.translation;
            let k = &cam.intrinsics;
            let mut row: Vec<f32> = (0..3).flat_map(|i| (0..3).map(move |j| f(r[(i, j)]))).collect();
            row.extend([f(tr.x), f(tr.y), f(tr.z), f(k.fx), f(k.fy), f(k.cx), f(k.cy)]);
            row
        })
        .collect();
    vec![
        ("images", vec![t, h, w], Data::F32(images)),
        ("labels", vec![t, h, w], Data::U8(labels)),
        ("gt_pointmaps", vec![t, h, w, 3], Data::F32(points)),
        ("gt_valid", vec![t, h, w], Data::U8(valid)),
        ("gt_trajectories", vec![q, t, 3], Data::F32(trajectories)),
        ("visibility", vec![q, t], Data::U8(visibility)),
        ("query_pixels", vec![q, 2], Data::F32(queries)),
        ("cameras", vec![t, 16], Data::F32(cameras)),
    ]
}

/// Writes `scene` into `dir` (created if needed). Output bytes depend only on
/// the scene, so equal seeds give identical bundles.
pub fn write_bundle(scene: &SceneSample, dir: &Path, with_pgm: bool) -> Result<BundleManifest> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::new();
    let mut files = Vec::new();
    for (name, shape, data) in arrays(scene) {
        let (file, dtype, bytes) = match data {
            Data::F32(v) => (format!("{name}.f32"), "float32", v.iter().flat_map(|x| x.to_le_bytes()).collect()),
            Data::U8(v) => (format!("{name}.u8"), "uint8", v),
        };
        fs::write(dir.join(&file), bytes)?;
        files.push(file.clone());
        entries.push(ArrayEntry {
            name: name.into(),
            file,
            dtype: dtype.into(),
            shape,
        });
    }
    if with_pgm {
        fs::create_dir_all(dir.join("frames"))?;
        for (t, im) in scene.images.iter().enumerate() {
            let file = format!("frames/frame_{t:03}.pgm");
            fs::write(dir.join(&file), im.to_pgm())?;
            files.push(file);
        }
    }
    let manifest = BundleManifest {
        format: BUNDLE_FORMAT.into(),
        version: BUNDLE_VERSION,
        source: "synthetic".into(),
        seed: scene.config.seed,
        config: scene.config.clone(),
        arrays: entries,
        files,
    };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<BundleManifest> {
    let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let m: BundleManifest = serde_json::from_str(&text)?;
    if m.format != BUNDLE_FORMAT || m.version != BUNDLE_VERSION {
        return Err(Error::BundleInvalid(format!("unsupported format {} v{}", m.format, m.version)));
    }
    if m.source != "synthetic" {
        return Err(Error::BundleInvalid(format!("no loader for source {:?}", m.source)));
    }
    Ok(m)
}

fn close(stored: f32, fresh: f64) -> bool {
    (stored as f64 - fresh).abs() <= STORED_TOLERANCE * fresh.abs().max(1.0)
}

/// Loads a bundle. The analytic scene is regenerated from the echoed config
/// (dense ground truth for arbitrary frame pairs needs the surface model, not
/// just the stored arrays) and every stored array is checked against it.
pub fn read_bundle(dir: &Path) -> Result<SceneSample> {
    let manifest = read_manifest(dir)?;
    let scene = generate(&manifest.config)?;
    let expected = arrays(&scene);
    if manifest.arrays.len() != expected.len() {
        return Err(Error::BundleInvalid(format!("expected {} arrays", expected.len())));
    }
    for (entry, (name, shape, data)) in manifest.arrays.iter().zip(expected) {
        if entry.name != name || entry.shape != shape {
            return Err(Error::BundleInvalid(format!(
                "array {} has shape {:?}, expected {name} {:?}",
                entry.name, entry.shape, shape
            )));
        }
        let bytes = fs::read(dir.join(&entry.file))?;
        let ok = match data {
            Data::F32(v) => {
                bytes.len() == 4 * v.len()
                    && bytes
                        .chunks_exact(4)
                        .zip(&v)
                        .all(|(b, &x)| close(f32::from_le_bytes([b[0], b[1], b[2], b[3]]), x as f64))
            }
            Data::U8(v) => bytes == v,
        };
        if !ok {
            return Err(Error::BundleInvalid(format!("{} does not match the scene its config describes", entry.file)));
        }
    }
    Ok(scene)
}
