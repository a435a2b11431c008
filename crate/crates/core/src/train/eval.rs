//! Sequence inference against the first frame and metric reports.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{EncodedFrame, Model};
use crate::diffusion::refine;
use crate::error::{Error, Result};
use crate::geometry::{apd, chamfer_distance, format_apd_table, validate_thresholds, Pointmap, TrajectorySet};
use crate::scene::SceneSample;
use crate::seeding::mix;

pub const ROW_COARSE: &str = "DINO_4D (w/o Diffusion)";
pub const ROW_FULL: &str = "DINO_4D (Full)";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// APD thresholds in metres, strictly increasing.
    pub thresholds: Vec<f64>,
    pub refine: bool,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            thresholds: vec![0.1, 0.3, 0.5],
            refine: false,
            seed: 0,
        }
    }
}

/// Predictions for pairs `(0, j)`, `j = 1..T`; entry `k` belongs to frame `k + 1`.
#[derive(Clone, Debug)]
pub struct SequenceOutput {
    pub tracking: Vec<Pointmap>,
    pub reconstruction: Vec<Pointmap>,
    pub refined: Option<Vec<Pointmap>>,
    pub pairs_executed: usize,
}

/// Prediction for a single `(0, j)` pair.
#[derive(Clone, Debug)]
pub struct PairOutput {
    pub tracking: Pointmap,
    pub reconstruction: Pointmap,
    pub refined: Option<Pointmap>,
}

fn run_pair(
    model: &Model,
    scene: &SceneSample,
    frames: (&EncodedFrame, &EncodedFrame),
    refine_seed: Option<u64>,
) -> Result<PairOutput> {
    let j = frames.1.frame;
    let (pred, _) = model.predict_pair((&scene.images[0], &scene.images[j]), frames, &scene.intrinsics())?;
    let refined = match refine_seed {
        Some(seed) => Some(refine(
            &pred.reconstruction,
            &frames.1.fused,
            &model.denoiser,
            &model.config.schedule()?,
            model.residual_scale,
            mix(seed, j as u64),
        )?),
        None => None,
    };
    Ok(PairOutput {
        tracking: pred.tracking,
        reconstruction: pred.reconstruction,
        refined,
    })
}

fn encode(model: &Model, scene: &SceneSample, f: usize) -> Result<EncodedFrame> {
    model.encode_frame(&scene.images[f], &scene.labels[f], f)
}

/// Runs the predictor on the pair `(0, j)`. Refinement with the same seed
/// matches the corresponding entry of [`infer_sequence`].
pub fn infer_pair(model: &Model, scene: &SceneSample, j: usize, refine_seed: Option<u64>) -> Result<PairOutput> {
    if j == 0 || j >= scene.frames() {
        return Err(Error::InvalidArgument(format!(
            "frame {j} is not in 1..{} for a {}-frame sequence",
            scene.frames(),
            scene.frames()
        )));
    }
    let (f0, fj) = (encode(model, scene, 0)?, encode(model, scene, j)?);
    run_pair(model, scene, (&f0, &fj), refine_seed)
}

/// Runs the predictor on every `(0, j)` pair, optionally refining each
/// reconstruction with the denoiser.
pub fn infer_sequence(model: &Model, scene: &SceneSample, refine_seed: Option<u64>) -> Result<SequenceOutput> {
    let t = scene.frames();
    let frames = (0..t)
        .into_par_iter()
        .map(|f| encode(model, scene, f))
        .collect::<Result<Vec<_>>>()?;
    let calls = AtomicUsize::new(0);
    let outputs = (1..t)
        .into_par_iter()
        .map(|j| {
            calls.fetch_add(1, Ordering::Relaxed);
            run_pair(model, scene, (&frames[0], &frames[j]), refine_seed)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = SequenceOutput {
        tracking: Vec::with_capacity(t - 1),
        reconstruction: Vec::with_capacity(t - 1),
        refined: refine_seed.map(|_| Vec::with_capacity(t - 1)),
        pairs_executed: calls.into_inner(),
    };
    for pair in outputs {
        out.tracking.push(pair.tracking);
        out.reconstruction.push(pair.reconstruction);
        if let (Some(list), Some(r)) = (out.refined.as_mut(), pair.refined) {
            list.push(r);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SequenceScores {
    pub apd: Vec<f64>,
    pub cd_coarse_cm: f64,
    pub cd_refined_cm: Option<f64>,
}

fn mean_chamfer(pred: &[Pointmap], truth: &[Pointmap]) -> Result<f64> {
    let cds = pred
        .par_iter()
        .zip(truth)
        .map(|(p, t)| chamfer_distance(&p.valid_points(), &t.valid_points()))
        .collect::<Result<Vec<_>>>()?;
    Ok(cds.iter().sum::<f64>() / cds.len() as f64)
}

/// APD over the query trajectories (frames `1..T`, camera-0 coordinates) and
/// mean per-pair Chamfer distance of the reconstructions.
pub fn score_sequence(scene: &SceneSample, out: &SequenceOutput, thresholds: &[f64]) -> Result<SequenceScores> {
    validate_thresholds(thresholds)?;
    let t = scene.frames();
    if out.tracking.len() != t - 1 || out.reconstruction.len() != t - 1 {
        return Err(Error::ShapeMismatch(format!("expected {} pair outputs", t - 1)));
    }
    let (truth, kept) = scene.trajectories_in_camera(0)?.restrict_frames(1, t)?;
    let mut positions = Vec::with_capacity(kept.len() * (t - 1));
    for &q in &kept {
        let (x, y) = scene.query_pixels[q];
        for tr in &out.tracking {
            positions.push(tr.points[tr.index(x, y)]);
        }
    }
    let predicted = TrajectorySet::new(kept.len(), t - 1, positions, vec![true; kept.len() * (t - 1)])?;
    let apd_values = apd(&predicted, &truth, thresholds)?;

    let pose0 = &scene.cameras[0].pose;
    let gt: Vec<Pointmap> = (1..t).map(|j| scene.gt_pointmaps[j].transformed(pose0)).collect();
    let cd_coarse_cm = mean_chamfer(&out.reconstruction, &gt)?;
    let cd_refined_cm = match &out.refined {
        Some(r) => Some(mean_chamfer(r, &gt)?),
        None => None,
    };
    Ok(SequenceScores {
        apd: apd_values,
        cd_coarse_cm,
        cd_refined_cm,
    })
}

fn threshold_key(t: f64) -> String {
    format!("{t}")
}

fn apd_map(thresholds: &[f64], values: &[f64]) -> BTreeMap<String, f64> {
    thresholds.iter().zip(values).map(|(t, v)| (threshold_key(*t), *v)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneReport {
    pub scene_id: String,
    pub apd: BTreeMap<String, f64>,
    pub cd_coarse_cm: f64,
    pub cd_refined_cm: Option<f64>,
    pub pairs_executed: usize,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    /// How per-scene values are combined.
    pub reduction: String,
    pub num_scenes: usize,
    pub apd: BTreeMap<String, f64>,
    pub cd_coarse_cm: f64,
    pub cd_refined_cm: Option<f64>,
    pub pairs_executed: usize,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub method: String,
    pub apd: BTreeMap<String, f64>,
    pub cd_cm: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub thresholds: Vec<f64>,
    pub scenes: Vec<SceneReport>,
    pub aggregate: AggregateReport,
    pub table: Vec<TableRow>,
}

impl EvalReport {
    /// Plain-text rendering of the summary rows.
    pub fn render_table(&self) -> String {
        let rows: Vec<(String, Vec<f64>)> = self
            .table
            .iter()
            .map(|r| {
                let v = self.thresholds.iter().map(|t| r.apd[&threshold_key(*t)]).collect();
                (r.method.clone(), v)
            })
            .collect();
        let mut out = format_apd_table(&self.thresholds, &rows);
        for r in &self.table {
            if let Some(cd) = r.cd_cm {
                out.push_str(&format!("{}: CD {cd:.2} cm\n", r.method));
            }
        }
        out
    }
}

pub fn evaluate_scene(model: &Model, scene: &SceneSample, scene_id: &str, cfg: &EvalConfig) -> Result<SceneReport> {
    validate_thresholds(&cfg.thresholds)?;
    let start = Instant::now();
    let out = infer_sequence(model, scene, cfg.refine.then_some(cfg.seed))?;
    let scores = score_sequence(scene, &out, &cfg.thresholds)?;
    Ok(SceneReport {
        scene_id: scene_id.to_string(),
        apd: apd_map(&cfg.thresholds, &scores.apd),
        cd_coarse_cm: scores.cd_coarse_cm,
        cd_refined_cm: scores.cd_refined_cm,
        pairs_executed: out.pairs_executed,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Evaluates every scene and aggregates with a per-sequence mean.
pub fn evaluate(model: &Model, scenes: &[(String, SceneSample)], cfg: &EvalConfig) -> Result<EvalReport> {
    if scenes.is_empty() {
        return Err(Error::InvalidArgument("no scenes to evaluate".into()));
    }
    let reports = scenes
        .iter()
        .map(|(id, s)| evaluate_scene(model, s, id, cfg))
        .collect::<Result<Vec<_>>>()?;
    let n = reports.len() as f64;
    let mean = |f: &dyn Fn(&SceneReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    let apd_mean: BTreeMap<String, f64> = cfg
        .thresholds
        .iter()
        .map(|t| {
            let k = threshold_key(*t);
            let v = mean(&|r| r.apd[&k]);
            (k, v)
        })
        .collect();
    let cd_refined = if cfg.refine {
        Some(mean(&|r| r.cd_refined_cm.unwrap_or(f64::NAN)))
    } else {
        None
    };
    let aggregate = AggregateReport {
        reduction: "per_sequence_mean".into(),
        num_scenes: reports.len(),
        apd: apd_mean.clone(),
        cd_coarse_cm: mean(&|r| r.cd_coarse_cm),
        cd_refined_cm: cd_refined,
        pairs_executed: reports.iter().map(|r| r.pairs_executed).sum(),
        wall_time_s: reports.iter().map(|r| r.wall_time_s).sum(),
    };
    let mut table = vec![TableRow {
        method: ROW_COARSE.into(),
        apd: apd_mean.clone(),
        cd_cm: Some(aggregate.cd_coarse_cm),
    }];
    if cfg.refine {
        table.push(TableRow {
            method: ROW_FULL.into(),
            apd: apd_mean,
            cd_cm: cd_refined,
        });
    }
    Ok(EvalReport {
        thresholds: cfg.thresholds.clone(),
        scenes: reports,
        aggregate,
        table,
    })
}
