//! Conditional diffusion on pointmap residuals: closed-form forward noising,
//! an epsilon-predicting per-pixel denoiser, and a short ancestral sampler.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{pixel_center, Pointmap, Vec3};
use crate::nn::{tanh, tanh_backward, Dense, ParamSet};
use crate::semantic::{sample_feature, FeatureMap};

pub const DEFAULT_STEPS: usize = 5;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.2;

/// Per-step noise variances and their cumulative signal fractions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSchedule {
    pub betas: Vec<f64>,
    pub alphas_bar: Vec<f64>,
}

impl Default for DiffusionSchedule {
    fn default() -> Self {
        Self::linear(DEFAULT_STEPS, DEFAULT_BETA_START, DEFAULT_BETA_END).expect("default schedule is valid")
    }
}

impl DiffusionSchedule {
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() || !betas.iter().all(|b| *b > 0.0 && *b < 1.0) {
            return Err(Error::InvalidArgument(format!("betas must lie in (0, 1): {betas:?}")));
        }
        let alphas_bar = betas
            .iter()
            .scan(1.0, |acc, b| {
                *acc *= 1.0 - b;
                Some(*acc)
            })
            .collect();
        Ok(Self { betas, alphas_bar })
    }

    /// Betas spaced linearly from `start` to `end` over `steps` steps.
    pub fn linear(steps: usize, start: f64, end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidArgument("schedule needs at least one step".into()));
        }
        let betas = (0..steps)
            .map(|k| {
                if steps == 1 {
                    start
                } else {
                    start + (end - start) * k as f64 / (steps - 1) as f64
                }
            })
            .collect();
        Self::from_betas(betas)
    }

    pub fn num_steps(&self) -> usize {
        self.betas.len()
    }

    fn check_step(&self, t: usize) -> Result<()> {
        if t >= self.num_steps() {
            return Err(Error::StepOutOfRange {
                step: t,
                num_steps: self.num_steps(),
            });
        }
        Ok(())
    }

    fn alpha_bar_prev(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alphas_bar[t - 1]
        }
    }

    /// Lower-bound posterior variance used by the sampler at step `t`.
    pub fn posterior_variance(&self, t: usize) -> f64 {
        (1.0 - self.alpha_bar_prev(t)) / (1.0 - self.alphas_bar[t]) * self.betas[t]
    }
}

/// Dense grid of 3D offsets with a validity mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Residual {
    pub width: usize,
    pub height: usize,
    pub values: Vec<Vec3>,
    pub valid: Vec<bool>,
}

impl Residual {
    pub fn new(width: usize, height: usize, values: Vec<Vec3>, valid: Vec<bool>) -> Result<Self> {
        if values.len() != width * height || valid.len() != values.len() {
            return Err(Error::ShapeMismatch(format!("residual {width}x{height} has wrong length")));
        }
        if values.iter().zip(&valid).any(|(v, &ok)| ok && !v.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidArgument("non-finite residual on a valid pixel".into()));
        }
        Ok(Self {
            width,
            height,
            values,
            valid,
        })
    }

    /// `truth - coarse`, valid where both are.
    pub fn between(truth: &Pointmap, coarse: &Pointmap) -> Result<Self> {
        if !truth.same_shape(coarse) {
            return Err(Error::ShapeMismatch("truth and coarse pointmaps differ in shape".into()));
        }
        let valid: Vec<bool> = truth.valid.iter().zip(&coarse.valid).map(|(a, b)| *a && *b).collect();
        let values = truth
            .points
            .iter()
            .zip(&coarse.points)
            .zip(&valid)
            .map(|((t, c), &v)| if v { t - c } else { Vec3::zeros() })
            .collect();
        Self::new(truth.width, truth.height, values, valid)
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| v * s).collect(),
            ..self.clone()
        }
    }

    /// Root-mean-square per coordinate over valid pixels.
    pub fn rms(&self) -> f64 {
        let (s, n) = self
            .values
            .iter()
            .zip(&self.valid)
            .filter(|(_, &v)| v)
            .fold((0.0, 0usize), |(s, n), (r, _)| (s + r.norm_squared(), n + 3));
        if n == 0 {
            0.0
        } else {
            (s / n as f64).sqrt()
        }
    }
}

/// `z_t = sqrt(abar_t) * residual + sqrt(1 - abar_t) * noise`, elementwise.
pub fn forward_noise(residual: &Residual, t: usize, noise: &[Vec3], schedule: &DiffusionSchedule) -> Result<Vec<Vec3>> {
    schedule.check_step(t)?;
    if noise.len() != residual.values.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} noise vectors for {} residual pixels",
            noise.len(),
            residual.values.len()
        )));
    }
    let a = schedule.alphas_bar[t];
    let (sa, sn) = (a.sqrt(), (1.0 - a).sqrt());
    Ok(residual.values.iter().zip(noise).map(|(x, e)| x * sa + e * sn).collect())
}

/// Standard-normal grid from a counter-based stream: the same `(seed, stream)`
/// always yields the same values regardless of call order.
pub fn gaussian_grid(seed: u64, stream: u64, n: usize) -> Vec<Vec3> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    (0..n)
        .map(|_| {
            Vec3::new(
                r.sample(StandardNormal),
                r.sample(StandardNormal),
                r.sample(StandardNormal),
            )
        })
        .collect()
}

/// Sinusoidal embedding of the integer step.
pub fn timestep_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for k in 0..half {
        let freq = (-(10_000f64.ln()) * k as f64 / half as f64).exp();
        out[k] = (t as f64 * freq).sin();
        out[half + k] = (t as f64 * freq).cos();
    }
    out
}

/// Per-pixel conditioning: the coarse point and the fused feature sampled at
/// the pixel centre.
#[derive(Clone, Debug)]
pub struct Condition {
    pub coarse: Vec<Vec3>,
    pub features: DMatrix<f64>,
}

impl Condition {
    pub fn len(&self) -> usize {
        self.coarse.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coarse.is_empty()
    }
}

pub fn build_condition(coarse: &Pointmap, fused: &FeatureMap) -> Result<Condition> {
    if !fused.covers(coarse.width, coarse.height) {
        return Err(Error::ShapeMismatch("fused features do not cover the pointmap".into()));
    }
    let n = coarse.len();
    let mut features = DMatrix::zeros(n, fused.dim);
    for p in 0..n {
        let f = sample_feature(fused, &pixel_center(p % coarse.width, p / coarse.width));
        for (k, v) in f.into_iter().enumerate() {
            features[(p, k)] = v;
        }
    }
    Ok(Condition {
        coarse: coarse.points.clone(),
        features,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DenoiserConfig {
    pub hidden: usize,
    pub time_dim: usize,
    pub feature_dim: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            time_dim: 16,
            feature_dim: 32,
        }
    }
}

impl DenoiserConfig {
    pub fn input_dim(&self) -> usize {
        3 + self.time_dim + 3 + self.feature_dim
    }
}

/// Anything that predicts the injected noise from `(z_t, t, c)`.
pub trait NoisePredictor {
    /// Predicts noise for the pixels listed in `rows`.
    fn predict_noise(&self, z: &[Vec3], t: usize, cond: &Condition, rows: &[usize]) -> Result<Vec<Vec3>>;
}

/// Per-pixel tanh MLP `(z_t, embed(t), coarse, feature) -> epsilon`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserParams {
    pub l1: Dense,
    pub l2: Dense,
    pub l3: Dense,
    pub time_dim: usize,
}

impl DenoiserParams {
    pub fn init<R: Rng>(cfg: &DenoiserConfig, rng: &mut R) -> Self {
        Self {
            l1: Dense::xavier(cfg.input_dim(), cfg.hidden, rng),
            l2: Dense::xavier(cfg.hidden, cfg.hidden, rng),
            l3: Dense::zeros(cfg.hidden, 3),
            time_dim: cfg.time_dim,
        }
    }

    fn inputs(&self, z: &[Vec3], t: usize, cond: &Condition, rows: &[usize]) -> Result<DMatrix<f64>> {
        let fd = cond.features.ncols();
        let width = 6 + self.time_dim + fd;
        if width != self.l1.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "denoiser expects {} inputs, condition gives {width}",
                self.l1.input_dim()
            )));
        }
        if z.len() != cond.len() {
            return Err(Error::ShapeMismatch("noised grid and condition differ in size".into()));
        }
        let emb = timestep_embedding(t, self.time_dim);
        let mut x = DMatrix::zeros(rows.len(), width);
        for (r, &p) in rows.iter().enumerate() {
            for c in 0..3 {
                x[(r, c)] = z[p][c];
                x[(r, 3 + self.time_dim + c)] = cond.coarse[p][c];
            }
            for (k, e) in emb.iter().enumerate() {
                x[(r, 3 + k)] = *e;
            }
            for k in 0..fd {
                x[(r, 6 + self.time_dim + k)] = cond.features[(p, k)];
            }
        }
        Ok(x)
    }
}

impl ParamSet for DenoiserParams {
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.l1.visit_named("denoiser.l1", f);
        self.l2.visit_named("denoiser.l2", f);
        self.l3.visit_named("denoiser.l3", f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.l1.visit_named_mut("denoiser.l1", f);
        self.l2.visit_named_mut("denoiser.l2", f);
        self.l3.visit_named_mut("denoiser.l3", f);
    }
}

impl NoisePredictor for DenoiserParams {
    fn predict_noise(&self, z: &[Vec3], t: usize, cond: &Condition, rows: &[usize]) -> Result<Vec<Vec3>> {
        let x = self.inputs(z, t, cond, rows)?;
        let out = self.l3.forward(&tanh(self.l2.forward(&tanh(self.l1.forward(&x)))));
        Ok((0..rows.len()).map(|r| Vec3::new(out[(r, 0)], out[(r, 1)], out[(r, 2)])).collect())
    }
}

#[derive(Clone, Debug)]
pub struct DiffusionLoss {
    pub value: f64,
    pub grads: DenoiserParams,
}

fn valid_rows(valid: &[bool]) -> Vec<usize> {
    valid.iter().enumerate().filter_map(|(i, &v)| v.then_some(i)).collect()
}

/// Mean squared error (per coordinate, over valid pixels) between predicted
/// and injected noise at step `t`, with gradients w.r.t. the denoiser.
pub fn diffusion_loss(
    params: &DenoiserParams,
    residual: &Residual,
    cond: &Condition,
    t: usize,
    noise: &[Vec3],
    schedule: &DiffusionSchedule,
) -> Result<DiffusionLoss> {
    if cond.len() != residual.values.len() {
        return Err(Error::ShapeMismatch(format!(
            "condition has {} pixels, residual {}",
            cond.len(),
            residual.values.len()
        )));
    }
    let z = forward_noise(residual, t, noise, schedule)?;
    let rows = valid_rows(&residual.valid);
    if rows.is_empty() {
        return Err(Error::NoValidPixels);
    }
    let x = params.inputs(&z, t, cond, &rows)?;
    let h1 = tanh(params.l1.forward(&x));
    let h2 = tanh(params.l2.forward(&h1));
    let out = params.l3.forward(&h2);
    let m = (3 * rows.len()) as f64;
    let mut d_out = DMatrix::zeros(rows.len(), 3);
    let mut value = 0.0;
    for (r, &p) in rows.iter().enumerate() {
        for c in 0..3 {
            let e = out[(r, c)] - noise[p][c];
            value += e * e;
            d_out[(r, c)] = 2.0 * e / m;
        }
    }
    let mut grads = crate::nn::zeros_like(params);
    let d_h2 = params.l3.backward(&h2, &d_out, &mut grads.l3);
    let d_h1 = params.l2.backward(&h1, &tanh_backward(&d_h2, &h2), &mut grads.l2);
    params.l1.backward_params(&x, &tanh_backward(&d_h1, &h1), &mut grads.l1);
    Ok(DiffusionLoss { value: value / m, grads })
}

/// Runs the `K`-step ancestral reverse process from pure noise over the
/// valid pixels and returns the sampled (normalized) residual.
pub fn reverse_process<P: NoisePredictor + ?Sized>(
    predictor: &P,
    cond: &Condition,
    valid: &[bool],
    schedule: &DiffusionSchedule,
    seed: u64,
) -> Result<Vec<Vec3>> {
    let n = cond.len();
    if valid.len() != n {
        return Err(Error::ShapeMismatch("validity mask does not match condition".into()));
    }
    let rows = valid_rows(valid);
    let k = schedule.num_steps();
    let mut z = gaussian_grid(seed, k as u64, n);
    for (p, v) in z.iter_mut().zip(valid) {
        if !v {
            *p = Vec3::zeros();
        }
    }
    for t in (0..k).rev() {
        let eps = predictor.predict_noise(&z, t, cond, &rows)?;
        let ab = schedule.alphas_bar[t];
        let ab_prev = schedule.alpha_bar_prev(t);
        let beta = schedule.betas[t];
        let c_x0 = ab_prev.sqrt() * beta / (1.0 - ab);
        let c_z = (1.0 - beta).sqrt() * (1.0 - ab_prev) / (1.0 - ab);
        let sigma = schedule.posterior_variance(t).sqrt();
        let noise = (t > 0).then(|| gaussian_grid(seed, t as u64, n));
        for (r, &p) in rows.iter().enumerate() {
            let x0 = (z[p] - eps[r] * (1.0 - ab).sqrt()) / ab.sqrt();
            let mut next = x0 * c_x0 + z[p] * c_z;
            if let Some(noise) = &noise {
                next += noise[p] * sigma;
            }
            z[p] = next;
        }
    }
    Ok(z)
}

/// Refines a coarse pointmap by sampling a residual conditioned on the coarse
/// points and fused features. `residual_scale` undoes the training-time
/// normalization. Invalid pixels are returned untouched.
pub fn refine<P: NoisePredictor + ?Sized>(
    coarse: &Pointmap,
    features: &FeatureMap,
    predictor: &P,
    schedule: &DiffusionSchedule,
    residual_scale: f64,
    seed: u64,
) -> Result<Pointmap> {
    let cond = build_condition(coarse, features)?;
    let sample = reverse_process(predictor, &cond, &coarse.valid, schedule, seed)?;
    let points = coarse
        .points
        .iter()
        .zip(&sample)
        .zip(&coarse.valid)
        .map(|((c, s), &v)| if v { c + s * residual_scale } else { *c })
        .collect();
    Pointmap::new(
        coarse.width,
        coarse.height,
        points,
        coarse.valid.clone(),
        coarse.source_frame,
        coarse.target_time,
    )
}
