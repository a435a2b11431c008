//! The training loop.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::checkpoint::save_checkpoint;
use super::model::{Model, ModelConfig};
use super::optim::{adamw_step, AdamWConfig, OptimState};
use super::{total_loss, LossComponents, LossWeights};
use crate::diffusion::{build_condition, diffusion_loss, gaussian_grid, Residual};
use crate::error::{Error, Result};
use crate::geometry::{CameraModel, Pointmap, Pose, Vec3};
use crate::nn::{zeros_like, ParamSet};
use crate::predictor::{backward_pair, geometric_loss, reprojection_loss, GeometricLoss, PairCache, PairPrediction, ReprojectionLoss};
use crate::scene::{sample_window, SceneSample};
use crate::seeding::{mix, rng, stage_seed};
use crate::semantic::{semantic_consistency_loss, SemanticLoss, SemanticLossConfig};

pub const LOG_FILE: &str = "train_log.jsonl";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
/// Learning rate of the toy training default; the optimizer's own default
/// stays at 5e-5.
pub const TOY_LEARNING_RATE: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub seed: u64,
    /// Frames per sampled window; the first frame is the reference.
    pub window: usize,
    pub optimizer: AdamWConfig,
    pub weights: LossWeights,
    pub model: ModelConfig,
    /// Pixel stride of the semantic-loss query domain.
    pub semantic_stride: usize,
    /// Pixels drawn per step for the diffusion loss.
    pub diffusion_pixels: usize,
    pub checkpoint_every: usize,
    pub keep_checkpoints: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            seed: 0,
            window: 24,
            optimizer: AdamWConfig {
                lr: TOY_LEARNING_RATE,
                ..AdamWConfig::default()
            },
            weights: LossWeights::default(),
            model: ModelConfig::default(),
            semantic_stride: 2,
            diffusion_pixels: 1024,
            checkpoint_every: 100,
            keep_checkpoints: 3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        self.weights.validate()?;
        self.model.validate()?;
        if self.window < 2 {
            return Err(Error::ConfigInvalid("window needs at least two frames".into()));
        }
        if self.semantic_stride == 0 || self.diffusion_pixels == 0 {
            return Err(Error::ConfigInvalid("semantic_stride and diffusion_pixels must be positive".into()));
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    #[serde(rename = "L_reproj")]
    pub l_reproj: f64,
    #[serde(rename = "L_geo")]
    pub l_geo: f64,
    #[serde(rename = "L_sem")]
    pub l_sem: f64,
    #[serde(rename = "L_diff")]
    pub l_diff: f64,
    #[serde(rename = "L_total")]
    pub l_total: f64,
    pub wall_ms: f64,
}

#[derive(Clone, Debug)]
pub struct StepResult {
    pub components: LossComponents,
    /// Weighted gradient of the total loss.
    pub grads: Model,
    /// RMS of the raw diffusion residual drawn this step.
    pub residual_rms: f64,
    pub pnp_failures: usize,
}

struct PairEval {
    k: usize,
    pred: PairPrediction,
    cache: PairCache,
    gt_recon: Pointmap,
    geo: GeometricLoss,
    sem: SemanticLoss,
    reproj: Option<ReprojectionLoss>,
}

/// Losses and weighted gradients for one window of one scene. `rng_seed`
/// drives the diffusion draw (pair, step, pixels, noise).
pub fn compute_step(
    model: &Model,
    scene: &SceneSample,
    window: &[usize],
    cfg: &TrainConfig,
    rng_seed: u64,
) -> Result<StepResult> {
    if window.len() < 2 {
        return Err(Error::InvalidArgument("window needs a reference and at least one target".into()));
    }
    let w = &cfg.weights;
    let intr = scene.intrinsics();
    let frames = window
        .par_iter()
        .map(|&f| model.encode_frame(&scene.images[f], &scene.labels[f], f))
        .collect::<Result<Vec<_>>>()?;
    let i = window[0];
    let sem_cfg = SemanticLossConfig::strided(scene.config.width, scene.config.height, cfg.semantic_stride);
    let evals = (1..window.len())
        .into_par_iter()
        .map(|k| {
            let j = window[k];
            let (pred, cache) = model.predict_pair((&scene.images[i], &scene.images[j]), (&frames[0], &frames[k]), &intr)?;
            let (gt_track, gt_recon) = scene.pair_ground_truth(i, j)?;
            let geo = geometric_loss(&pred, &gt_track, &gt_recon)?;
            let cam_j = CameraModel::new(scene.relative_pose(i, j), intr);
            let sem = semantic_consistency_loss(&frames[0].semantic, &frames[k].semantic, &pred.tracking, &cam_j, &sem_cfg)?;
            let reproj = match reprojection_loss(&pred, &intr, &Pose::identity()) {
                Ok(l) => Some(l),
                Err(Error::DivergedPnP { .. } | Error::InsufficientCorrespondences { .. } | Error::NoValidPixels) => None,
                Err(e) => return Err(e),
            };
            Ok(PairEval {
                k,
                pred,
                cache,
                gt_recon,
                geo,
                sem,
                reproj,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let n_pairs = evals.len() as f64;
    let n_ok = evals.iter().filter(|e| e.reproj.is_some()).count();
    let (wg, ws) = (w.lambda_geo / n_pairs, w.lambda_sem / n_pairs);
    let wr = if n_ok > 0 { w.lambda_reproj / n_ok as f64 } else { 0.0 };
    let backs = evals
        .par_iter()
        .map(|e| {
            let zero = vec![Vec3::zeros(); e.pred.tracking.len()];
            let reproj_grad = e.reproj.as_ref().map_or(&zero, |r| &r.d_points);
            let d_t: Vec<Vec3> = e.geo.d_tracking.iter().zip(&e.sem.grad).map(|(g, s)| g * wg + s * ws).collect();
            let d_r: Vec<Vec3> = e.geo.d_reconstruction.iter().zip(reproj_grad).map(|(g, r)| g * wg + r * wr).collect();
            let d_c: Vec<f64> = e.geo.d_confidence.iter().map(|g| g * wg).collect();
            let mut g = zeros_like(&model.predictor);
            let inputs = backward_pair(&e.cache, &model.predictor, &d_t, &d_r, &d_c, &mut g)?;
            Ok((g, inputs))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut grads = model.zeros_like();
    let mut d_fused: Vec<DMatrix<f64>> = frames.iter().map(|f| DMatrix::zeros(f.fused.num_tokens(), f.fused.dim)).collect();
    for (e, (g, inputs)) in evals.iter().zip(backs) {
        grads.predictor.add_scaled(&g, 1.0);
        d_fused[0] += inputs.fused_i;
        d_fused[e.k] += inputs.fused_j;
    }
    for (f, d) in frames.iter().zip(&d_fused) {
        model.backward_frame(f, d, &mut grads)?;
    }

    let mut r = rng(rng_seed);
    let pick = &evals[r.gen_range(0..evals.len())];
    let residual = Residual::between(&pick.gt_recon, &pick.pred.reconstruction)?;
    let residual_rms = residual.rms();
    let mut diff = 0.0;
    if residual_rms > 0.0 {
        let mut target = residual.scaled(1.0 / residual_rms);
        let valid: Vec<usize> = (0..target.valid.len()).filter(|&p| target.valid[p]).collect();
        if valid.len() > cfg.diffusion_pixels {
            let mut keep = vec![false; target.valid.len()];
            for s in sample(&mut r, valid.len(), cfg.diffusion_pixels) {
                keep[valid[s]] = true;
            }
            target.valid = keep;
        }
        let schedule = model.config.schedule()?;
        let cond = build_condition(&pick.pred.reconstruction, &frames[pick.k].fused)?;
        let t = r.gen_range(0..schedule.num_steps());
        let noise = gaussian_grid(r.gen(), 0, target.values.len());
        let dl = diffusion_loss(&model.denoiser, &target, &cond, t, &noise, &schedule)?;
        grads.denoiser.add_scaled(&dl.grads, w.lambda_diff);
        diff = dl.value;
    }

    let components = LossComponents {
        reproj: if n_ok > 0 {
            evals.iter().filter_map(|e| e.reproj.as_ref()).map(|r| r.value).sum::<f64>() / n_ok as f64
        } else {
            0.0
        },
        geo: evals.iter().map(|e| e.geo.value).sum::<f64>() / n_pairs,
        sem: evals.iter().map(|e| e.sem.value).sum::<f64>() / n_pairs,
        diff,
    };
    Ok(StepResult {
        components,
        grads,
        residual_rms,
        pnp_failures: evals.len() - n_ok,
    })
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub log: Vec<StepLog>,
    /// Periodic checkpoints still on disk, oldest first, then the final one.
    pub checkpoints: Vec<PathBuf>,
}

fn hyperparameters(cfg: &TrainConfig) -> serde_json::Value {
    serde_json::to_value(cfg).unwrap_or(serde_json::Value::Null)
}

/// Trains a fresh model on `scenes`. With `out_dir`, writes the JSON-lines
/// log, periodic checkpoints (keeping the newest few) and a final checkpoint.
/// Aborts on a non-finite loss, leaving earlier checkpoints in place.
pub fn train(scenes: &[SceneSample], cfg: &TrainConfig, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    if scenes.is_empty() {
        return Err(Error::InvalidArgument("training needs at least one scene".into()));
    }
    for s in scenes {
        if cfg.window > s.frames() {
            return Err(Error::WindowTooLong {
                window: cfg.window,
                frames: s.frames(),
            });
        }
    }
    let mut model = Model::init(&cfg.model, cfg.seed)?;
    let mut state = OptimState::new(model.num_params(), cfg.optimizer);
    let mut log_file = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir.join(CHECKPOINT_DIR))?;
            Some(BufWriter::new(File::create(dir.join(LOG_FILE))?))
        }
        None => None,
    };
    let step_seed = stage_seed(cfg.seed, "train.step");
    let mut log = Vec::with_capacity(cfg.steps);
    let mut checkpoints: Vec<PathBuf> = Vec::new();
    for step in 0..cfg.steps {
        let start = Instant::now();
        let mut r = rng(mix(step_seed, step as u64));
        let scene = &scenes[r.gen_range(0..scenes.len())];
        let window = sample_window(scene.frames(), cfg.window, None, r.gen())?;
        let result = compute_step(&model, scene, &window, cfg, r.gen())?;
        let c = result.components;
        let l_total = total_loss(&c, &cfg.weights)?;
        if !result.grads.all_finite() {
            return Err(Error::NonFiniteLoss("gradient".into()));
        }
        if result.pnp_failures > 0 {
            log::debug!("step {step}: PnP failed on {} pairs", result.pnp_failures);
        }
        let mut flat = model.to_flat();
        adamw_step(&mut flat, &result.grads.to_flat(), &mut state)?;
        if !flat.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFiniteLoss("parameter update".into()));
        }
        let scale = model.residual_scale;
        model.set_flat(&flat);
        model.residual_scale = match (step, result.residual_rms > 0.0) {
            (0, true) => result.residual_rms,
            (_, true) => 0.98 * scale + 0.02 * result.residual_rms,
            _ => scale,
        };
        let entry = StepLog {
            step,
            l_reproj: c.reproj,
            l_geo: c.geo,
            l_sem: c.sem,
            l_diff: c.diff,
            l_total,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        };
        log::info!(
            "step {step}: L_total {l_total:.5} (reproj {:.4}, geo {:.4}, sem {:.4}, diff {:.4})",
            c.reproj,
            c.geo,
            c.sem,
            c.diff
        );
        if let Some(f) = log_file.as_mut() {
            serde_json::to_writer(&mut *f, &entry)?;
            f.write_all(b"\n")?;
            f.flush()?;
        }
        log.push(entry);
        if let Some(dir) = out_dir {
            let done = step + 1;
            if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 {
                let path = dir.join(CHECKPOINT_DIR).join(format!("step_{done:06}.ckpt"));
                save_checkpoint(&path, &model, done as u64, hyperparameters(cfg))?;
                checkpoints.push(path);
                while checkpoints.len() > cfg.keep_checkpoints.max(1) {
                    fs::remove_file(checkpoints.remove(0))?;
                }
            }
        }
    }
    if let Some(dir) = out_dir {
        let path = dir.join(FINAL_CHECKPOINT);
        save_checkpoint(&path, &model, cfg.steps as u64, hyperparameters(cfg))?;
        checkpoints.push(path);
    }
    Ok(TrainOutcome { model, log, checkpoints })
}
