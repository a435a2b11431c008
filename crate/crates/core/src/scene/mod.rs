//! Procedural dynamic scenes with exact ground truth.

mod bundle;
pub mod world;

pub use bundle::{read_bundle, write_bundle, BundleManifest, MANIFEST_FILE};
pub use world::{Body, Shape, Surface, SurfaceHit, World};

use rand::Rng;
use rand_distr::{Distribution, UnitSphere};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    look_at, pixel_center, rotation_about, CameraModel, Intrinsics, Pixel, Pointmap, Pose, TrajectorySet, Vec3,
};
use crate::image::{GrayImage, LabelMap};
use crate::seeding::{mix, rng, stage_seed};

pub const MAX_STRIDE: usize = 6;
/// Occluder must be at least this much closer (metres of camera depth).
pub const OCCLUSION_TOLERANCE: f64 = 1e-6;
const LOOK_TARGET: [f64; 3] = [0.0, 0.2, 0.5];
const CAMERA_HEIGHT: f64 = -0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub num_objects: usize,
    /// Peak object drift in metres.
    pub motion_amplitude: f64,
    pub orbit_radius: f64,
    /// Camera orbit rate in radians per frame.
    pub angular_speed: f64,
    pub textureless_fraction: f64,
    pub patch_size: usize,
    /// Query grid spacing in pixels on the first frame.
    pub query_stride: usize,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            width: 112,
            height: 112,
            frames: 24,
            num_objects: 3,
            motion_amplitude: 0.25,
            orbit_radius: 4.0,
            angular_speed: 0.012,
            textureless_fraction: 0.5,
            patch_size: 14,
            query_stride: 4,
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ConfigInvalid(m));
        if self.frames < 2 {
            return bad(format!("frames must be at least 2, got {}", self.frames));
        }
        if self.patch_size == 0
            || self.width == 0
            || self.height == 0
            || self.width % self.patch_size != 0
            || self.height % self.patch_size != 0
        {
            return bad(format!(
                "{}x{} is not a positive multiple of patch size {}",
                self.width, self.height, self.patch_size
            ));
        }
        if !(0.0..=1.0).contains(&self.textureless_fraction) {
            return bad(format!("textureless_fraction {} outside [0, 1]", self.textureless_fraction));
        }
        if self.num_objects > 8 {
            return bad(format!("at most 8 objects supported, got {}", self.num_objects));
        }
        if !(self.motion_amplitude >= 0.0 && self.motion_amplitude <= 1.0) {
            return bad(format!("motion_amplitude {} outside [0, 1]", self.motion_amplitude));
        }
        if !(self.orbit_radius >= 2.5 && self.orbit_radius <= 20.0) {
            return bad(format!("orbit_radius {} outside [2.5, 20]", self.orbit_radius));
        }
        let sweep = self.angular_speed.abs() * (self.frames - 1) as f64;
        if !self.angular_speed.is_finite() || sweep > 0.8 {
            return bad(format!("camera sweep {sweep} rad exceeds 0.8"));
        }
        if self.query_stride == 0 {
            return bad("query_stride must be positive".into());
        }
        Ok(())
    }

    pub fn intrinsics(&self) -> Intrinsics {
        Intrinsics::centered(self.width, self.height, 0.9 * self.width as f64)
    }
}

/// One generated sequence. Immutable after generation.
#[derive(Clone, Debug)]
pub struct SceneSample {
    pub config: SceneConfig,
    pub images: Vec<GrayImage>,
    pub labels: Vec<LabelMap>,
    /// World-frame reconstruction pointmaps, one per frame.
    pub gt_pointmaps: Vec<Pointmap>,
    /// World-frame trajectories of the first-frame query pixels.
    pub gt_trajectories: TrajectorySet,
    pub query_pixels: Vec<(usize, usize)>,
    pub cameras: Vec<CameraModel>,
    pub world: World,
    hits: Vec<Vec<Option<SurfaceHit>>>,
}

fn build_world(cfg: &SceneConfig) -> World {
    let mut r = rng(stage_seed(cfg.seed, "scene.world"));
    let (lo, hi) = world::BACKGROUND_SPAN;
    let frames = cfg.frames as f64;
    let bodies = (0..cfg.num_objects)
        .map(|k| {
            let slot = if cfg.num_objects > 1 {
                -0.9 + 1.8 * k as f64 / (cfg.num_objects - 1) as f64
            } else {
                0.0
            };
            let center = Vec3::new(
                slot + r.gen_range(-0.15..0.15),
                r.gen_range(-0.2..0.5),
                r.gen_range(-0.2..1.0),
            );
            let shape = match k % 3 {
                0 => Shape::Sphere {
                    radius: r.gen_range(0.3..0.42),
                },
                1 => Shape::Cuboid {
                    half: [r.gen_range(0.2..0.3), r.gen_range(0.2..0.3), r.gen_range(0.2..0.3)],
                },
                _ => Shape::Sheet {
                    half_u: 0.55,
                    half_v: 0.4,
                    amplitude: 0.08,
                    wavenumber: 5.0,
                    omega: 2.0 * std::f64::consts::PI / 12.0,
                    phase: r.gen_range(0.0..std::f64::consts::TAU),
                },
            };
            let axis = Vec3::from(UnitSphere.sample(&mut r));
            let tilt = rotation_about(&Vec3::from(UnitSphere.sample(&mut r)), r.gen_range(-0.3..0.3));
            let base_rotation = match shape {
                Shape::Sheet { .. } => tilt,
                _ => rotation_about(&axis, r.gen_range(0.0..std::f64::consts::TAU)),
            };
            Body {
                shape,
                center,
                base_rotation,
                spin_axis: Vec3::from(UnitSphere.sample(&mut r)),
                spin: if matches!(shape, Shape::Sheet { .. }) {
                    0.0
                } else {
                    r.gen_range(0.01..0.04)
                },
                drift_dir: Vec3::from(UnitSphere.sample(&mut r)),
                drift_amplitude: cfg.motion_amplitude,
                drift_freq: 2.0 * std::f64::consts::PI / frames.max(8.0) * r.gen_range(0.7..1.3),
                drift_phase: r.gen_range(0.0..std::f64::consts::TAU),
            }
        })
        .collect();
    World {
        bodies,
        textureless_until: lo + (hi - lo) * cfg.textureless_fraction + if cfg.textureless_fraction >= 1.0 { 1e6 } else { 0.0 },
    }
}

/// Orbit centred on the look direction; fully determined by the orbit fields.
fn build_cameras(cfg: &SceneConfig) -> Vec<CameraModel> {
    let phi0 = -0.5 * cfg.angular_speed * (cfg.frames - 1) as f64;
    let target = Vec3::from(LOOK_TARGET);
    (0..cfg.frames)
        .map(|t| {
            let phi = phi0 + cfg.angular_speed * t as f64;
            let eye = Vec3::new(cfg.orbit_radius * phi.sin(), CAMERA_HEIGHT, -cfg.orbit_radius * phi.cos());
            CameraModel::new(look_at(&eye, &target, &Vec3::y()), cfg.intrinsics())
        })
        .collect()
}

struct Frame {
    image: GrayImage,
    labels: LabelMap,
    pointmap: Pointmap,
    hits: Vec<Option<SurfaceHit>>,
}

fn render_frame(cfg: &SceneConfig, world: &World, camera: &CameraModel, t: usize) -> Result<Frame> {
    let n = cfg.width * cfg.height;
    let mut hits = Vec::with_capacity(n);
    let mut intensity = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut points = Vec::with_capacity(n);
    let mut valid = Vec::with_capacity(n);
    for y in 0..cfg.height {
        for x in 0..cfg.width {
            let (o, d) = camera.world_ray(&pixel_center(x, y));
            let hit = world.cast(&o, &d, t as f64, 1e-9);
            match &hit {
                Some(h) => {
                    intensity.push(world.intensity(h.surface, &h.material));
                    labels.push(world.label(h.surface, &h.material));
                    points.push(o + d * h.s);
                    valid.push(true);
                }
                None => {
                    intensity.push(0.0);
                    labels.push(world::LABEL_BACKGROUND);
                    points.push(Vec3::zeros());
                    valid.push(false);
                }
            }
            hits.push(hit);
        }
    }
    Ok(Frame {
        image: GrayImage::new(cfg.width, cfg.height, intensity)?,
        labels: LabelMap::new(cfg.width, cfg.height, labels)?,
        pointmap: Pointmap::new(cfg.width, cfg.height, points, valid, t, t)?,
        hits,
    })
}

/// Whether `point` (at time `t`) is the first surface seen by `camera` along
/// its own projection ray. `None` if it projects outside the image or behind
/// the camera.
fn depth_test(world: &World, camera: &CameraModel, cfg: &SceneConfig, point: &Vec3, t: usize) -> Option<bool> {
    let px = camera.project(point).ok()?;
    if !(px.x >= 0.0 && px.y >= 0.0 && px.x < cfg.width as f64 && px.y < cfg.height as f64) {
        return None;
    }
    let depth = camera.depth_of(point);
    let (o, d) = camera.world_ray(&px);
    let first = world.cast(&o, &d, t as f64, 1e-9)?;
    Some(first.s >= depth - OCCLUSION_TOLERANCE)
}

/// Generates a scene deterministically from its configuration.
pub fn generate(cfg: &SceneConfig) -> Result<SceneSample> {
    cfg.validate()?;
    let world = build_world(cfg);
    let cameras = build_cameras(cfg);
    let frames: Vec<Frame> = (0..cfg.frames)
        .into_par_iter()
        .map(|t| render_frame(cfg, &world, &cameras[t], t))
        .collect::<Result<_>>()?;

    let mut query_pixels = Vec::new();
    let mut positions = Vec::new();
    let mut visible = Vec::new();
    let s = cfg.query_stride;
    for y in (s / 2..cfg.height).step_by(s) {
        for x in (s / 2..cfg.width).step_by(s) {
            let Some(hit) = frames[0].hits[y * cfg.width + x] else {
                continue;
            };
            let track: Vec<Vec3> = (0..cfg.frames).map(|t| world.position(&hit, t as f64)).collect();
            let vis: Option<Vec<bool>> = track
                .iter()
                .enumerate()
                .map(|(t, p)| depth_test(&world, &cameras[t], cfg, p, t))
                .collect();
            // Queries that leave the image are dropped so invisibility always means occlusion.
            let Some(mut vis) = vis else {
                continue;
            };
            vis[0] = true;
            query_pixels.push((x, y));
            positions.extend(track);
            visible.extend(vis);
        }
    }
    if query_pixels.is_empty() {
        return Err(Error::ConfigInvalid("no query pixel stays inside the image".into()));
    }
    let gt_trajectories = TrajectorySet::new(query_pixels.len(), cfg.frames, positions, visible)?;

    let mut images = Vec::with_capacity(cfg.frames);
    let mut labels = Vec::with_capacity(cfg.frames);
    let mut gt_pointmaps = Vec::with_capacity(cfg.frames);
    let mut hits = Vec::with_capacity(cfg.frames);
    for f in frames {
        images.push(f.image);
        labels.push(f.labels);
        gt_pointmaps.push(f.pointmap);
        hits.push(f.hits);
    }
    Ok(SceneSample {
        config: cfg.clone(),
        images,
        labels,
        gt_pointmaps,
        gt_trajectories,
        query_pixels,
        cameras,
        world,
        hits,
    })
}

impl SceneSample {
    pub fn frames(&self) -> usize {
        self.config.frames
    }

    pub fn intrinsics(&self) -> Intrinsics {
        self.config.intrinsics()
    }

    /// Pose taking camera-`i` coordinates to camera-`j` coordinates.
    pub fn relative_pose(&self, i: usize, j: usize) -> Pose {
        let (a, b) = (&self.cameras[i].pose, &self.cameras[j].pose);
        let r = b.rotation * a.rotation.transpose();
        Pose {
            rotation: r,
            translation: b.translation - r * a.translation,
        }
    }

    fn check_frame(&self, t: usize) -> Result<()> {
        if t >= self.frames() {
            return Err(Error::InvalidArgument(format!("frame {t} outside 0..{}", self.frames())));
        }
        Ok(())
    }

    /// Ground-truth tracking (pixels of `i` at time `j`) and reconstruction
    /// (pixels of `j` at time `j`) pointmaps, both in camera-`i` coordinates.
    pub fn pair_ground_truth(&self, i: usize, j: usize) -> Result<(Pointmap, Pointmap)> {
        self.check_frame(i)?;
        self.check_frame(j)?;
        let pose = &self.cameras[i].pose;
        let (w, h) = (self.config.width, self.config.height);
        let tracked: Vec<Vec3> = self.hits[i]
            .iter()
            .map(|hit| hit.map_or(Vec3::zeros(), |hit| pose.transform(&self.world.position(&hit, j as f64))))
            .collect();
        let valid: Vec<bool> = self.hits[i].iter().map(Option::is_some).collect();
        let tracking = Pointmap::new(w, h, tracked, valid, i, j)?;
        let reconstruction = self.gt_pointmaps[j].transformed(pose);
        Ok((tracking, reconstruction))
    }

    /// Query trajectories expressed in camera-`i` coordinates.
    pub fn trajectories_in_camera(&self, i: usize) -> Result<TrajectorySet> {
        self.check_frame(i)?;
        Ok(self.gt_trajectories.transformed(&self.cameras[i].pose))
    }

    pub fn surface_at(&self, t: usize, x: usize, y: usize) -> Option<SurfaceHit> {
        self.hits[t][y * self.config.width + x]
    }

    /// Largest reprojection error (pixels) of the ground-truth pointmaps
    /// through their own cameras.
    pub fn max_reprojection_error(&self) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for (pm, cam) in self.gt_pointmaps.iter().zip(&self.cameras) {
            for (idx, (p, v)) in pm.points.iter().zip(&pm.valid).enumerate() {
                if !*v {
                    continue;
                }
                let px: Pixel = cam.project(p)?;
                worst = worst.max((px - pixel_center(idx % pm.width, idx / pm.width)).norm());
            }
        }
        Ok(worst)
    }

    pub fn window(&self, window: usize, stride: Option<usize>, seed: u64) -> Result<Vec<usize>> {
        sample_window(self.frames(), window, stride, seed)
    }
}

/// `window` frame indices with a uniform stride (drawn from `1..=6` unless
/// forced) and a uniformly drawn start.
pub fn sample_window(frames: usize, window: usize, stride: Option<usize>, seed: u64) -> Result<Vec<usize>> {
    let too_long = || Error::WindowTooLong { window, frames };
    if window == 0 {
        return Err(Error::InvalidArgument("window must hold at least one frame".into()));
    }
    let fits = |s: usize| (window - 1) * s < frames;
    let mut r = rng(mix(seed, 0x57_81DE));
    let stride = match stride {
        Some(0) => return Err(Error::InvalidArgument("stride must be positive".into())),
        Some(s) if fits(s) => s,
        Some(_) => return Err(too_long()),
        None => {
            let options: Vec<usize> = (1..=MAX_STRIDE).filter(|&s| fits(s)).collect();
            if options.is_empty() {
                return Err(too_long());
            }
            options[r.gen_range(0..options.len())]
        }
    };
    let span = (window - 1) * stride;
    let start = r.gen_range(0..frames - span);
    Ok((0..window).map(|k| start + k * stride).collect())
}

/// A set of scenes sharing a base configuration, seeded per index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteConfig {
    pub num_scenes: usize,
    pub seed: u64,
    pub scene: SceneConfig,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            num_scenes: 8,
            seed: 2024,
            scene: SceneConfig::default(),
        }
    }
}

impl SuiteConfig {
    pub fn scene_config(&self, index: usize) -> SceneConfig {
        SceneConfig {
            seed: mix(stage_seed(self.seed, "scene"), index as u64),
            ..self.scene.clone()
        }
    }

    pub fn scene_configs(&self) -> Vec<SceneConfig> {
        (0..self.num_scenes).map(|i| self.scene_config(i)).collect()
    }
}
