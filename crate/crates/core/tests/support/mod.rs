//! Independent oracles shared by the integration tests and the acceptance
//! suite: central-difference gradient checks and brute-force metrics.
#![allow(dead_code)]

use dino4d_core::diffusion::{
    diffusion_loss, gaussian_grid, reverse_process, Condition, DenoiserConfig, DenoiserParams, DiffusionSchedule,
    NoisePredictor, Residual,
};
use dino4d_core::fusion::{fuse_backward, fuse_tokens, AdapterConfig, AdapterParams};
use dino4d_core::geometry::{CameraModel, Intrinsics, Pixel, Pointmap, Pose, TrajectorySet, Vec3};
use dino4d_core::image::GrayImage;
use dino4d_core::Result;
use dino4d_core::nn::{zeros_like, ParamSet};
use dino4d_core::predictor::{
    backward_pair, forward_pair, geometric_loss, reprojection_loss_at_pose, GeoEncoder, PairInputs, PairPrediction,
    PredictorConfig, PredictorParams,
};
use dino4d_core::scene::{generate, SceneConfig};
use dino4d_core::seeding::rng;
use dino4d_core::semantic::{semantic_consistency_loss, FeatureMap, SemanticLossConfig};
use dino4d_core::train::{compute_step, LossWeights, Model, ModelConfig, TrainConfig};
use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;
/// Denominator floor of the relative error, per unit of loss magnitude:
/// central differences at `FD_STEP` carry round-off of roughly
/// a few ulps of `|f| / FD_STEP`, so smaller gradients are compared against this.
pub const FD_FLOOR: f64 = 1e-5;

pub fn relative_error(analytic: f64, numeric: f64, scale: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_FLOOR * scale.max(1.0))
}

/// Central differences of `f` at `x` for the listed coordinates; returns the
/// worst relative error against `analytic`.
pub fn fd_check(x: &[f64], analytic: &[f64], coords: &[usize], mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let scale = f(x).abs();
    let mut probe = x.to_vec();
    coords
        .iter()
        .map(|&c| {
            probe[c] = x[c] + FD_STEP;
            let up = f(&probe);
            probe[c] = x[c] - FD_STEP;
            let down = f(&probe);
            probe[c] = x[c];
            relative_error(analytic[c], (up - down) / (2.0 * FD_STEP), scale)
        })
        .fold(0.0, f64::max)
}

pub fn pick(r: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    sample(r, n, k.min(n)).into_vec()
}

fn matrix(r: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| r.gen_range(-scale..scale))
}

fn flatten(points: &[Vec3]) -> Vec<f64> {
    points.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
}

fn unflatten(x: &[f64]) -> Vec<Vec3> {
    x.chunks(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect()
}

fn randomize<P: ParamSet>(p: &mut P, r: &mut ChaCha8Rng, scale: f64) {
    p.visit_mut(&mut |_, v| v.iter_mut().for_each(|x| *x += r.gen_range(-scale..scale)));
}

/// Semantic consistency loss w.r.t. the tracked points.
pub fn semantic_case(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (w, h, ps, dim) = (28, 28, 7, 8);
    let field = |r: &mut ChaCha8Rng, frame| {
        let data = (0..16 * dim).map(|_| r.gen_range(-1.0..1.0)).collect();
        FeatureMap::new(4, 4, dim, ps, frame, data).unwrap()
    };
    let (f_src, f_dst) = (field(&mut r, 0), field(&mut r, 1));
    let intr = Intrinsics::centered(w, h, 25.0);
    let axis = Vec3::new(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0), 1.0);
    let t = Vec3::new(r.gen_range(-0.3..0.3), r.gen_range(-0.3..0.3), r.gen_range(-0.3..0.3));
    let cam = CameraModel::new(Pose::from_axis_angle(&axis, r.gen_range(-0.2..0.2), t), intr);
    let points: Vec<Vec3> = (0..w * h)
        .map(|_| cam.unproject(&Pixel::new(r.gen_range(4.0..24.0), r.gen_range(4.0..24.0)), r.gen_range(1.0..5.0)))
        .collect();
    let cfg = SemanticLossConfig::strided(w, h, 3);
    let loss = |pts: Vec<Vec3>| {
        let pm = Pointmap::new(w, h, pts, vec![true; w * h], 0, 1).unwrap();
        semantic_consistency_loss(&f_src, &f_dst, &pm, &cam, &cfg).unwrap()
    };
    let analytic = flatten(&loss(points.clone()).grad);
    let domain: Vec<usize> = cfg.query_domain.iter().map(|&(x, y)| 3 * (y * w + x)).collect();
    let mut coords: Vec<usize> = pick(&mut r, domain.len(), 10)
        .into_iter()
        .map(|k| domain[k] + r.gen_range(0..3))
        .collect();
    coords.push(3 * (w + 1)); // outside the strided domain
    fd_check(&flatten(&points), &analytic, &coords, |x| loss(unflatten(x)).value)
}

/// Cross-attention adapter w.r.t. both token streams and all projections.
pub fn fusion_case(seed: u64) -> f64 {
    let mut r = rng(seed);
    let cfg = AdapterConfig {
        d_geo: 6,
        d_sem: 5,
        d_k: 4,
        d_v: 3,
    };
    let (n, m) = (r.gen_range(2..6), r.gen_range(2..6));
    let geo = matrix(&mut r, n, cfg.d_geo, 1.0);
    let sem = matrix(&mut r, m, cfg.d_sem, 1.0);
    let mut params = AdapterParams::init(&cfg, &mut r);
    params.w_q *= 10.0;
    params.w_k *= 10.0;
    params.w_o = matrix(&mut r, cfg.d_v, cfg.d_geo, 1.0);
    let weights = matrix(&mut r, n, cfg.d_geo, 1.0);
    let scalar = |g: &DMatrix<f64>, s: &DMatrix<f64>, p: &AdapterParams| {
        fuse_tokens(g, s, p).unwrap().0.component_mul(&weights).sum()
    };
    let (_, cache) = fuse_tokens(&geo, &sem, &params).unwrap();
    let grads = fuse_backward(&weights, &cache, &params).unwrap();

    let mut worst: f64 = 0.0;
    let all = |len: usize| (0..len).collect::<Vec<_>>();
    worst = worst.max(fd_check(geo.as_slice(), grads.geo.as_slice(), &all(geo.len()), |x| {
        scalar(&DMatrix::from_column_slice(n, cfg.d_geo, x), &sem, &params)
    }));
    worst = worst.max(fd_check(sem.as_slice(), grads.sem.as_slice(), &all(sem.len()), |x| {
        scalar(&geo, &DMatrix::from_column_slice(m, cfg.d_sem, x), &params)
    }));
    let flat = params.to_flat();
    let analytic = grads.params.to_flat();
    worst.max(fd_check(&flat, &analytic, &all(flat.len()), |x| {
        let mut p = params.clone();
        p.set_flat(x);
        scalar(&geo, &sem, &p)
    }))
}

fn random_prediction(r: &mut ChaCha8Rng, w: usize, h: usize) -> PairPrediction {
    let cloud = |r: &mut ChaCha8Rng| {
        (0..w * h)
            .map(|_| Vec3::new(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0), r.gen_range(2.0..4.0)))
            .collect::<Vec<_>>()
    };
    let (t, c) = (cloud(r), cloud(r));
    PairPrediction {
        tracking: Pointmap::new(w, h, t, vec![true; w * h], 0, 1).unwrap(),
        reconstruction: Pointmap::new(w, h, c, vec![true; w * h], 1, 1).unwrap(),
        confidence: (0..w * h).map(|_| r.gen_range(0.3..3.0)).collect(),
    }
}

/// Geometric loss w.r.t. both pointmaps and the confidence map.
pub fn geometric_case(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (w, h) = (5, 4);
    let pred = random_prediction(&mut r, w, h);
    let gt = random_prediction(&mut r, w, h);
    let mut gt_t = gt.tracking.clone();
    let mut gt_r = gt.reconstruction.clone();
    for k in 0..w * h {
        gt_t.valid[k] = r.gen_bool(0.7);
        gt_r.valid[k] = r.gen_bool(0.7);
    }
    gt_t.valid[0] = true;
    let base = geometric_loss(&pred, &gt_t, &gt_r).unwrap();
    let pack = |p: &PairPrediction| {
        let mut x = flatten(&p.tracking.points);
        x.extend(flatten(&p.reconstruction.points));
        x.extend(&p.confidence);
        x
    };
    let mut analytic = flatten(&base.d_tracking);
    analytic.extend(flatten(&base.d_reconstruction));
    analytic.extend(&base.d_confidence);
    let x = pack(&pred);
    let n = w * h;
    let coords: Vec<usize> = (0..x.len()).collect();
    fd_check(&x, &analytic, &coords, |x| {
        let mut p = pred.clone();
        p.tracking.points = unflatten(&x[..3 * n]);
        p.reconstruction.points = unflatten(&x[3 * n..6 * n]);
        p.confidence = x[6 * n..].to_vec();
        geometric_loss(&p, &gt_t, &gt_r).unwrap().value
    })
}

/// Reprojection loss with the pose held fixed, w.r.t. the points.
pub fn reprojection_case(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (w, h) = (6, 5);
    let intr = Intrinsics::centered(w, h, 5.0);
    let axis = Vec3::new(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0));
    let pose = Pose::from_axis_angle(&axis, r.gen_range(-0.3..0.3), Vec3::new(0.1, -0.2, 0.3));
    let cam = CameraModel::new(pose, intr);
    let observed: Vec<Pixel> = (0..w * h)
        .map(|_| Pixel::new(r.gen_range(0.0..w as f64), r.gen_range(0.0..h as f64)))
        .collect();
    let points: Vec<Vec3> = observed
        .iter()
        .map(|px| cam.unproject(&(px + Pixel::new(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0))), r.gen_range(1.0..4.0)))
        .collect();
    let valid: Vec<bool> = (0..w * h).map(|k| k == 0 || r.gen_bool(0.8)).collect();
    let loss = |pts: Vec<Vec3>| {
        let pm = Pointmap::new(w, h, pts, valid.clone(), 1, 1).unwrap();
        reprojection_loss_at_pose(&pm, &observed, &intr, &pose).unwrap()
    };
    let analytic = flatten(&loss(points.clone()).d_points);
    let coords: Vec<usize> = (0..3 * w * h).collect();
    fd_check(&flatten(&points), &analytic, &coords, |x| loss(unflatten(x)).value)
}

/// Diffusion noise-prediction loss w.r.t. the denoiser weights.
pub fn diffusion_case(seed: u64) -> f64 {
    let mut r = rng(seed);
    let cfg = DenoiserConfig {
        hidden: 8,
        time_dim: 4,
        feature_dim: 5,
    };
    let mut params = DenoiserParams::init(&cfg, &mut r);
    params.l3 = dino4d_core::nn::Dense::xavier(cfg.hidden, 3, &mut r);
    let n = 12;
    let residual = Residual::new(
        4,
        3,
        (0..n).map(|_| Vec3::new(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0))).collect(),
        (0..n).map(|k| k == 0 || r.gen_bool(0.75)).collect(),
    )
    .unwrap();
    let cond = Condition {
        coarse: (0..n).map(|_| Vec3::new(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0), r.gen_range(2.0..4.0))).collect(),
        features: matrix(&mut r, n, cfg.feature_dim, 1.0),
    };
    let schedule = DiffusionSchedule::default();
    let t = r.gen_range(0..schedule.num_steps());
    let noise: Vec<Vec3> = (0..n).map(|_| Vec3::new(r.gen_range(-2.0..2.0), r.gen_range(-2.0..2.0), r.gen_range(-2.0..2.0))).collect();
    let analytic = diffusion_loss(&params, &residual, &cond, t, &noise, &schedule).unwrap().grads.to_flat();
    let flat = params.to_flat();
    let coords = pick(&mut r, flat.len(), 40);
    fd_check(&flat, &analytic, &coords, |x| {
        let mut p = params.clone();
        p.set_flat(x);
        diffusion_loss(&p, &residual, &cond, t, &noise, &schedule).unwrap().value
    })
}

fn random_image(r: &mut ChaCha8Rng, w: usize, h: usize) -> GrayImage {
    GrayImage::new(w, h, (0..w * h).map(|_| r.gen_range(0.0..1.0)).collect()).unwrap()
}

/// Pairwise predictor w.r.t. its weights and both fused token grids, under a
/// random linear functional of the outputs.
pub fn predictor_case(seed: u64) -> f64 {
    let mut r = rng(seed);
    let cfg = PredictorConfig {
        patch_size: 4,
        hidden: 6,
        d_geo: 3,
        base_depth: 3.0,
        time_scale: 8.0,
    };
    let (w, h) = (8, 8);
    let mut params = PredictorParams::init(&cfg, &mut r);
    randomize(&mut params, &mut r, 0.3);
    let (img_i, img_j) = (random_image(&mut r, w, h), random_image(&mut r, w, h));
    let fused = |r: &mut ChaCha8Rng, frame| {
        FeatureMap::new(2, 2, cfg.d_geo, cfg.patch_size, frame, (0..4 * cfg.d_geo).map(|_| r.gen_range(-1.0..1.0)).collect())
            .unwrap()
    };
    let (fi, fj) = (fused(&mut r, 0), fused(&mut r, 3));
    let intr = Intrinsics::centered(w, h, 7.0);
    let n = w * h;
    let ct: Vec<Vec3> = (0..n).map(|_| Vec3::new(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0))).collect();
    let cr: Vec<Vec3> = (0..n).map(|_| Vec3::new(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0))).collect();
    let cc: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();
    let run = |p: &PredictorParams, fi: &FeatureMap, fj: &FeatureMap| {
        let inputs = PairInputs {
            frame_i: &img_i,
            frame_j: &img_j,
            fused_i: fi,
            fused_j: fj,
            i: 0,
            j: 3,
        };
        forward_pair(&inputs, &intr, p, &cfg).unwrap()
    };
    let scalar = |pred: &PairPrediction| {
        let a: f64 = pred.tracking.points.iter().zip(&ct).map(|(p, c)| p.dot(c)).sum();
        let b: f64 = pred.reconstruction.points.iter().zip(&cr).map(|(p, c)| p.dot(c)).sum();
        let c: f64 = pred.confidence.iter().zip(&cc).map(|(p, c)| p * c).sum();
        a + b + c
    };
    let (_, cache) = run(&params, &fi, &fj);
    let mut grads = zeros_like(&params);
    let d_in = backward_pair(&cache, &params, &ct, &cr, &cc, &mut grads).unwrap();

    let flat = params.to_flat();
    let coords = pick(&mut r, flat.len(), 40);
    let mut worst = fd_check(&flat, &grads.to_flat(), &coords, |x| {
        let mut p = params.clone();
        p.set_flat(x);
        scalar(&run(&p, &fi, &fj).0)
    });
    let base_depth = flat.len() - 1;
    worst = worst.max(fd_check(&flat, &grads.to_flat(), &[base_depth], |x| {
        let mut p = params.clone();
        p.set_flat(x);
        scalar(&run(&p, &fi, &fj).0)
    }));
    // Token matrices are N x d (column-major); feature maps store them row-major.
    let to_rows = |m: &DMatrix<f64>| -> Vec<f64> { (0..m.nrows()).flat_map(|i| m.row(i).iter().copied().collect::<Vec<_>>()).collect() };
    let all: Vec<usize> = (0..fi.data.len()).collect();
    worst = worst.max(fd_check(&fi.data, &to_rows(&d_in.fused_i), &all, |x| {
        let f = FeatureMap { data: x.to_vec(), ..fi.clone() };
        scalar(&run(&params, &f, &fj).0)
    }));
    worst.max(fd_check(&fj.data, &to_rows(&d_in.fused_j), &all, |x| {
        let f = FeatureMap { data: x.to_vec(), ..fj.clone() };
        scalar(&run(&params, &fi, &f).0)
    }))
}

/// Geometric encoder w.r.t. its weights.
pub fn encoder_case(seed: u64) -> f64 {
    let mut r = rng(seed);
    let cfg = PredictorConfig {
        patch_size: 4,
        d_geo: 5,
        ..PredictorConfig::default()
    };
    let enc = GeoEncoder::init(&cfg, &mut r);
    let img = random_image(&mut r, 8, 12);
    let weights = matrix(&mut r, 6, cfg.d_geo, 1.0);
    let scalar = |e: &GeoEncoder| e.encode(&img, 4, 0).unwrap().0.to_matrix().component_mul(&weights).sum();
    let (_, cache) = enc.encode(&img, 4, 0).unwrap();
    let mut grads = zeros_like(&enc);
    enc.backward(&cache, &weights, &mut grads);
    let flat = enc.to_flat();
    let coords = pick(&mut r, flat.len(), 30);
    fd_check(&flat, &grads.to_flat(), &coords, |x| {
        let mut e = enc.clone();
        e.set_flat(x);
        scalar(&e)
    })
}

/// A small model config whose every block is cheap to differentiate numerically.
pub fn tiny_model_config() -> ModelConfig {
    let mut m = ModelConfig::default();
    m.predictor.hidden = 12;
    m.predictor.d_geo = 6;
    m.adapter = AdapterConfig {
        d_geo: 6,
        d_sem: 8,
        d_k: 4,
        d_v: 4,
    };
    m.features.dim = 8;
    m.denoiser = DenoiserConfig {
        hidden: 8,
        time_dim: 4,
        feature_dim: 6,
    };
    m
}

pub fn tiny_scene_config(seed: u64) -> SceneConfig {
    SceneConfig {
        width: 28,
        height: 28,
        frames: 4,
        num_objects: 1,
        seed,
        ..SceneConfig::default()
    }
}

/// Whole training step (encoder, adapter, predictor, geometric and semantic
/// losses) w.r.t. every model tensor, against the weighted total.
pub fn pipeline_case(seed: u64) -> f64 {
    let mut r = rng(seed);
    let scene = generate(&tiny_scene_config(seed)).unwrap();
    let cfg = TrainConfig {
        model: tiny_model_config(),
        weights: LossWeights {
            lambda_reproj: 0.0,
            lambda_geo: 1.0,
            lambda_sem: 0.5,
            lambda_diff: 0.0,
        },
        semantic_stride: 3,
        ..TrainConfig::default()
    };
    let mut model = Model::init(&cfg.model, seed).unwrap();
    randomize(&mut model, &mut r, 0.05);
    let window = [0, 2, 3];
    let total = |m: &Model| {
        let c = compute_step(m, &scene, &window, &cfg, 0).unwrap().components;
        c.geo + 0.5 * c.sem
    };
    let analytic = compute_step(&model, &scene, &window, &cfg, 0).unwrap().grads.to_flat();
    let flat = model.to_flat();
    let mut coords = Vec::new();
    let mut off = 0;
    model.visit(&mut |name, _, v| {
        if !name.starts_with("denoiser") {
            coords.extend(pick(&mut r, v.len(), 2).into_iter().map(|k| off + k));
        }
        off += v.len();
    });
    fd_check(&flat, &analytic, &coords, |x| {
        let mut m = model.clone();
        m.set_flat(x);
        total(&m)
    })
}

pub type GradientCase = fn(u64) -> f64;

pub const GRADIENT_CASES: [(&str, GradientCase); 8] = [
    ("semantic", semantic_case),
    ("fusion", fusion_case),
    ("geometric", geometric_case),
    ("reprojection", reprojection_case),
    ("diffusion", diffusion_case),
    ("predictor", predictor_case),
    ("encoder", encoder_case),
    ("pipeline", pipeline_case),
];

/// O(n m) symmetric Chamfer distance in centimetres (inputs in metres).
pub fn brute_chamfer(a: &[Vec3], b: &[Vec3]) -> f64 {
    let one_way = |x: &[Vec3], y: &[Vec3]| {
        x.iter()
            .map(|p| y.iter().map(|q| (p - q).norm()).fold(f64::INFINITY, f64::min))
            .sum::<f64>()
            / x.len() as f64
    };
    100.0 * 0.5 * (one_way(a, b) + one_way(b, a))
}

/// Per-threshold APD as a percentage, looping over every (query, frame).
pub fn brute_apd(pred: &TrajectorySet, truth: &TrajectorySet, thresholds: &[f64]) -> Vec<f64> {
    thresholds
        .iter()
        .map(|&d| {
            let (mut hit, mut n) = (0usize, 0usize);
            for q in 0..truth.num_queries {
                for t in 0..truth.frames {
                    if truth.is_visible(q, t) {
                        n += 1;
                        if (pred.position(q, t) - truth.position(q, t)).norm() < d {
                            hit += 1;
                        }
                    }
                }
            }
            100.0 * hit as f64 / n as f64
        })
        .collect()
}

/// Predicts the exact noise that separates `z_t` from a known clean residual.
pub struct OracleDenoiser {
    pub residual: Vec<Vec3>,
    pub schedule: DiffusionSchedule,
}

impl NoisePredictor for OracleDenoiser {
    fn predict_noise(&self, z: &[Vec3], t: usize, _cond: &Condition, rows: &[usize]) -> Result<Vec<Vec3>> {
        let ab = self.schedule.alphas_bar[t];
        Ok(rows.iter().map(|&p| (z[p] - self.residual[p] * ab.sqrt()) / (1.0 - ab).sqrt()).collect())
    }
}

/// Runs the reverse process with the oracle on a random residual grid and
/// returns `(mse, variance)` of the recovered residual over valid pixels.
pub fn closed_loop_case(seed: u64) -> (f64, f64) {
    let mut r = rng(seed);
    let (w, h) = (16, 12);
    let n = w * h;
    let residual: Vec<Vec3> = gaussian_grid(seed, 99, n).iter().map(|v| v * r.gen_range(0.1..2.0)).collect();
    let valid: Vec<bool> = (0..n).map(|_| r.gen_bool(0.9)).collect();
    let schedule = DiffusionSchedule::default();
    let cond = Condition {
        coarse: vec![Vec3::zeros(); n],
        features: DMatrix::zeros(n, 4),
    };
    let oracle = OracleDenoiser {
        residual: residual.clone(),
        schedule: schedule.clone(),
    };
    let out = reverse_process(&oracle, &cond, &valid, &schedule, seed).unwrap();
    let rows: Vec<usize> = (0..n).filter(|&p| valid[p]).collect();
    let m = (3 * rows.len()) as f64;
    let mse = rows.iter().map(|&p| (out[p] - residual[p]).norm_squared()).sum::<f64>() / m;
    let mean = rows.iter().map(|&p| residual[p].sum()).sum::<f64>() / m;
    let var = rows.iter().map(|&p| residual[p].iter().map(|c| (c - mean).powi(2)).sum::<f64>()).sum::<f64>() / m;
    (mse, var)
}

fn random_cloud(r: &mut ChaCha8Rng, n: usize, spread: f64) -> Vec<Vec3> {
    (0..n)
        .map(|_| Vec3::new(r.gen_range(-spread..spread), r.gen_range(-spread..spread), r.gen_range(-spread..spread)))
        .collect()
}

fn relative(x: f64, oracle: f64) -> f64 {
    (x - oracle).abs() / oracle.abs().max(1e-300)
}

/// Random trajectory pair with at least one visible frame per query.
pub fn random_trajectories(r: &mut ChaCha8Rng, queries: usize, frames: usize) -> (TrajectorySet, TrajectorySet) {
    let n = queries * frames;
    let truth_pos = random_cloud(r, n, 2.0);
    let scale = r.gen_range(0.05..0.6);
    let pred_pos: Vec<Vec3> = truth_pos.iter().map(|p| p + random_cloud(r, 1, scale)[0]).collect();
    let mut visible: Vec<bool> = (0..n).map(|_| r.gen_bool(0.7)).collect();
    for q in 0..queries {
        visible[q * frames + r.gen_range(0..frames)] = true;
    }
    let pred = TrajectorySet::new(queries, frames, pred_pos, vec![true; n]).unwrap();
    let truth = TrajectorySet::new(queries, frames, truth_pos, visible).unwrap();
    (pred, truth)
}

/// Worst relative deviation of Chamfer and APD from the exhaustive oracles
/// on one random instance with at most 128 points per set.
pub fn metric_case(seed: u64) -> f64 {
    let mut r = rng(seed);
    let spread = r.gen_range(0.1..5.0);
    let (na, nb) = (r.gen_range(1..=128), r.gen_range(1..=128));
    let a = random_cloud(&mut r, na, spread);
    let b = random_cloud(&mut r, nb, spread);
    let cd = dino4d_core::geometry::chamfer_distance(&a, &b).unwrap();
    let mut worst = relative(cd, brute_chamfer(&a, &b));
    let queries = r.gen_range(1..=16);
    let frames = r.gen_range(1..=128 / queries);
    let (pred, truth) = random_trajectories(&mut r, queries, frames);
    let thresholds = [0.1, 0.3, 0.5];
    let got = dino4d_core::geometry::apd(&pred, &truth, &thresholds).unwrap();
    for (g, o) in got.iter().zip(brute_apd(&pred, &truth, &thresholds)) {
        worst = worst.max(if o == 0.0 { g.abs() } else { relative(*g, o) });
    }
    worst
}

/// Random pose with rotation up to 30 degrees and translation up to 0.5 m.
pub fn random_pose(r: &mut ChaCha8Rng) -> Pose {
    let axis = random_cloud(r, 1, 1.0)[0];
    let angle = r.gen_range(0.0..30f64.to_radians());
    let dir = random_cloud(r, 1, 1.0)[0].normalize();
    Pose::from_axis_angle(&axis, angle, dir * r.gen_range(0.0..0.5))
}

/// PnP from the identity on noise-free correspondences; returns the
/// rotation geodesic (radians) and translation error (metres).
pub fn pnp_case(seed: u64) -> (f64, f64) {
    let mut r = rng(seed);
    let pose = random_pose(&mut r);
    let intr = Intrinsics::centered(112, 112, 100.0);
    let cam = CameraModel::new(pose, intr);
    let pixels: Vec<Pixel> = (0..60).map(|_| Pixel::new(r.gen_range(0.0..112.0), r.gen_range(0.0..112.0))).collect();
    let points: Vec<Vec3> = pixels.iter().map(|px| cam.unproject(px, r.gen_range(2.0..6.0))).collect();
    let sol = dino4d_core::predictor::estimate_pose_pnp(&points, &pixels, &intr, &Pose::identity()).unwrap();
    (
        dino4d_core::geometry::rotation_angle_between(&sol.pose.rotation, &pose.rotation),
        (sol.pose.translation - pose.translation).norm(),
    )
}
