use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{pixel_center, Intrinsics, Pointmap, Vec3};
use crate::image::GrayImage;
use crate::nn::{tanh, tanh_backward, Dense, ParamSet};
use crate::semantic::FeatureMap;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictorConfig {
    pub patch_size: usize,
    pub hidden: usize,
    /// Width of the geometric token stream (and of the fused features).
    pub d_geo: usize,
    /// Initial value of the learned base depth, meters.
    pub base_depth: f64,
    /// Frame gaps are divided by this before entering the network.
    pub time_scale: f64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            patch_size: 14,
            hidden: 128,
            d_geo: 32,
            base_depth: 4.0,
            time_scale: 24.0,
        }
    }
}

impl PredictorConfig {
    pub fn patch_pixels(&self) -> usize {
        self.patch_size * self.patch_size
    }

    pub fn input_dim(&self) -> usize {
        2 * self.patch_pixels() + 2 * self.d_geo + 3
    }
}

/// Lightweight geometric encoder: one tanh layer over raw patch intensities.
#[derive(Clone, Debug, PartialEq)]
pub struct GeoEncoder {
    pub layer: Dense,
}

impl GeoEncoder {
    pub fn init<R: Rng>(cfg: &PredictorConfig, rng: &mut R) -> Self {
        Self {
            layer: Dense::xavier(cfg.patch_pixels(), cfg.d_geo, rng),
        }
    }

    /// Returns the geometric feature map and the patch-token matrix it was computed from.
    pub fn encode(&self, image: &GrayImage, patch_size: usize, frame: usize) -> Result<(FeatureMap, GeoCache)> {
        let patches = patch_tokens(image, patch_size)?;
        if patches.ncols() != self.layer.input_dim() {
            return Err(Error::DimMismatch(format!(
                "patch of {} pixels, encoder expects {}",
                patches.ncols(),
                self.layer.input_dim()
            )));
        }
        let out = tanh(self.layer.forward(&patches));
        if !out.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFiniteLoss("geometric encoder output".into()));
        }
        let fm = FeatureMap::new(
            image.width / patch_size,
            image.height / patch_size,
            out.ncols(),
            patch_size,
            frame,
            row_major(&out),
        )?;
        Ok((fm, GeoCache { patches, out }))
    }

    pub fn backward(&self, cache: &GeoCache, d_out: &DMatrix<f64>, grad: &mut GeoEncoder) {
        let d_pre = tanh_backward(d_out, &cache.out);
        self.layer.backward_params(&cache.patches, &d_pre, &mut grad.layer);
    }
}

impl ParamSet for GeoEncoder {
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.layer.visit_named("geo_encoder", f)
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.layer.visit_named_mut("geo_encoder", f)
    }
}

#[derive(Clone, Debug)]
pub struct GeoCache {
    patches: DMatrix<f64>,
    out: DMatrix<f64>,
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut v = Vec::with_capacity(m.len());
    for r in m.row_iter() {
        v.extend(r.iter());
    }
    v
}

/// Image patches as rows (`N x patch_size²`), intensities centred on zero.
pub fn patch_tokens(image: &GrayImage, patch_size: usize) -> Result<DMatrix<f64>> {
    if patch_size == 0 || image.width % patch_size != 0 || image.height % patch_size != 0 {
        return Err(Error::DimMismatch(format!(
            "{}x{} image is not a whole number of {patch_size}-pixel patches",
            image.width, image.height
        )));
    }
    let pw = image.width / patch_size;
    let ph = image.height / patch_size;
    let pp = patch_size * patch_size;
    Ok(DMatrix::from_fn(pw * ph, pp, |t, k| {
        let (px, py) = (t % pw, t / pw);
        let (a, b) = (k % patch_size, k / patch_size);
        image.get(px * patch_size + a, py * patch_size + b) - 0.5
    }))
}

/// Trainable weights of both prediction branches.
///
/// A shared two-layer tanh trunk runs per token; the tracking and
/// reconstruction heads emit per-pixel 3D offsets from a fronto-parallel
/// surface at the learned base depth, and a third head emits log-confidence.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictorParams {
    pub trunk1: Dense,
    pub trunk2: Dense,
    pub tracking_head: Dense,
    pub reconstruction_head: Dense,
    pub confidence_head: Dense,
    pub base_depth: [f64; 1],
}

impl PredictorParams {
    /// Xavier trunk, zero heads.
    pub fn init<R: Rng>(cfg: &PredictorConfig, rng: &mut R) -> Self {
        let pp = cfg.patch_pixels();
        Self {
            trunk1: Dense::xavier(cfg.input_dim(), cfg.hidden, rng),
            trunk2: Dense::xavier(cfg.hidden, cfg.hidden, rng),
            tracking_head: Dense::zeros(cfg.hidden, 3 * pp),
            reconstruction_head: Dense::zeros(cfg.hidden, 3 * pp),
            confidence_head: Dense::zeros(cfg.hidden, pp),
            base_depth: [cfg.base_depth],
        }
    }
}

impl ParamSet for PredictorParams {
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.trunk1.visit_named("predictor.trunk1", f);
        self.trunk2.visit_named("predictor.trunk2", f);
        self.tracking_head.visit_named("predictor.tracking_head", f);
        self.reconstruction_head.visit_named("predictor.reconstruction_head", f);
        self.confidence_head.visit_named("predictor.confidence_head", f);
        f("predictor.base_depth", &[1], &self.base_depth);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.trunk1.visit_named_mut("predictor.trunk1", f);
        self.trunk2.visit_named_mut("predictor.trunk2", f);
        self.tracking_head.visit_named_mut("predictor.tracking_head", f);
        self.reconstruction_head.visit_named_mut("predictor.reconstruction_head", f);
        self.confidence_head.visit_named_mut("predictor.confidence_head", f);
        f("predictor.base_depth", &mut self.base_depth);
    }
}

/// Output of one pairwise inference.
#[derive(Clone, Debug, PartialEq)]
pub struct PairPrediction {
    /// Pixels of frame `i` at time `j`.
    pub tracking: Pointmap,
    /// Pixels of frame `j` at time `j`.
    pub reconstruction: Pointmap,
    /// Per-pixel confidence, positive.
    pub confidence: Vec<f64>,
}

/// Inputs for one `(i, j)` pair. Feature maps are the fused streams.
pub struct PairInputs<'a> {
    pub frame_i: &'a GrayImage,
    pub frame_j: &'a GrayImage,
    pub fused_i: &'a FeatureMap,
    pub fused_j: &'a FeatureMap,
    pub i: usize,
    pub j: usize,
}

#[derive(Clone, Debug)]
pub struct PairCache {
    fingerprint: u64,
    width: usize,
    height: usize,
    patch_size: usize,
    d_geo: usize,
    rays: Vec<Vec3>,
    input: DMatrix<f64>,
    h1: DMatrix<f64>,
    h2: DMatrix<f64>,
    confidence: Vec<f64>,
}

/// Row in the token grid and flat pixel index for each head output slot.
#[inline]
fn pixel_of(token: usize, slot: usize, pw: usize, ps: usize, width: usize) -> usize {
    let (px, py) = (token % pw, token / pw);
    let (a, b) = (slot % ps, slot / ps);
    (py * ps + b) * width + px * ps + a
}

/// Predicts the tracking and reconstruction pointmaps for frames `(i, j)`,
/// both in the camera frame of frame `i`.
pub fn forward_pair(
    inputs: &PairInputs<'_>,
    intrinsics: &Intrinsics,
    params: &PredictorParams,
    cfg: &PredictorConfig,
) -> Result<(PairPrediction, PairCache)> {
    let (fi, fj) = (inputs.frame_i, inputs.frame_j);
    if fi.width != fj.width || fi.height != fj.height {
        return Err(Error::DimMismatch("frames differ in resolution".into()));
    }
    let ps = cfg.patch_size;
    let pi = patch_tokens(fi, ps)?;
    let pj = patch_tokens(fj, ps)?;
    let n = pi.nrows();
    for fm in [inputs.fused_i, inputs.fused_j] {
        if fm.num_tokens() != n || fm.dim != cfg.d_geo || fm.patch_size != ps {
            return Err(Error::DimMismatch(format!(
                "fused features {}x{}x{} not aligned with {n} patches of {ps} px",
                fm.patch_width, fm.patch_height, fm.dim
            )));
        }
    }
    if params.trunk1.input_dim() != cfg.input_dim() {
        return Err(Error::DimMismatch("predictor weights do not match config".into()));
    }
    let pp = cfg.patch_pixels();
    let pw = fi.width / ps;
    let d = cfg.d_geo;
    let dt = (inputs.j as f64 - inputs.i as f64) / cfg.time_scale;
    let mut input = DMatrix::zeros(n, cfg.input_dim());
    input.columns_mut(0, pp).copy_from(&pi);
    input.columns_mut(pp, pp).copy_from(&pj);
    for t in 0..n {
        for k in 0..d {
            input[(t, 2 * pp + k)] = inputs.fused_i.token(t)[k];
            input[(t, 2 * pp + d + k)] = inputs.fused_j.token(t)[k];
        }
        let (px, py) = (t % pw, t / pw);
        let c = 2 * pp + 2 * d;
        input[(t, c)] = 2.0 * (px as f64 + 0.5) / pw as f64 - 1.0;
        input[(t, c + 1)] = 2.0 * (py as f64 + 0.5) / (n / pw) as f64 - 1.0;
        input[(t, c + 2)] = dt;
    }
    let h1 = tanh(params.trunk1.forward(&input));
    let h2 = tanh(params.trunk2.forward(&h1));
    let track = params.tracking_head.forward(&h2);
    let recon = params.reconstruction_head.forward(&h2);
    let conf = params.confidence_head.forward(&h2);

    let (w, h) = (fi.width, fi.height);
    let rays: Vec<Vec3> = (0..w * h).map(|p| intrinsics.ray(&pixel_center(p % w, p / w))).collect();
    let depth = params.base_depth[0];
    let mut tp: Vec<Vec3> = rays.iter().map(|r| r * depth).collect();
    let mut rp = tp.clone();
    let mut confidence = vec![0.0; w * h];
    for t in 0..n {
        for s in 0..pp {
            let p = pixel_of(t, s, pw, ps, w);
            for c in 0..3 {
                tp[p][c] += track[(t, 3 * s + c)];
                rp[p][c] += recon[(t, 3 * s + c)];
            }
            confidence[p] = conf[(t, s)].exp();
        }
    }
    let pred = PairPrediction {
        tracking: Pointmap::new(w, h, tp, vec![true; w * h], inputs.i, inputs.j)?,
        reconstruction: Pointmap::new(w, h, rp, vec![true; w * h], inputs.j, inputs.j)?,
        confidence: confidence.clone(),
    };
    let cache = PairCache {
        fingerprint: params.fingerprint(),
        width: w,
        height: h,
        patch_size: ps,
        d_geo: d,
        rays,
        input,
        h1,
        h2,
        confidence,
    };
    Ok((pred, cache))
}

/// Gradients w.r.t. the fused tokens of frames `i` and `j` (`N x d_geo` each).
pub struct PairInputGrads {
    pub fused_i: DMatrix<f64>,
    pub fused_j: DMatrix<f64>,
}

/// Backpropagates point and confidence gradients through both branches,
/// accumulating into `grad`.
pub fn backward_pair(
    cache: &PairCache,
    params: &PredictorParams,
    d_tracking: &[Vec3],
    d_reconstruction: &[Vec3],
    d_confidence: &[f64],
    grad: &mut PredictorParams,
) -> Result<PairInputGrads> {
    if params.fingerprint() != cache.fingerprint {
        return Err(Error::StaleCache);
    }
    let np = cache.width * cache.height;
    if d_tracking.len() != np || d_reconstruction.len() != np || d_confidence.len() != np {
        return Err(Error::ShapeMismatch("gradient grids do not match the prediction".into()));
    }
    let ps = cache.patch_size;
    let pp = ps * ps;
    let pw = cache.width / ps;
    let n = cache.input.nrows();
    let mut d_track = DMatrix::zeros(n, 3 * pp);
    let mut d_recon = DMatrix::zeros(n, 3 * pp);
    let mut d_conf = DMatrix::zeros(n, pp);
    for t in 0..n {
        for s in 0..pp {
            let p = pixel_of(t, s, pw, ps, cache.width);
            for c in 0..3 {
                d_track[(t, 3 * s + c)] = d_tracking[p][c];
                d_recon[(t, 3 * s + c)] = d_reconstruction[p][c];
            }
            d_conf[(t, s)] = d_confidence[p] * cache.confidence[p];
        }
    }
    grad.base_depth[0] += cache
        .rays
        .iter()
        .zip(d_tracking.iter().zip(d_reconstruction))
        .map(|(r, (a, b))| r.dot(&(a + b)))
        .sum::<f64>();
    let mut d_h2 = params.tracking_head.backward(&cache.h2, &d_track, &mut grad.tracking_head);
    d_h2 += params.reconstruction_head.backward(&cache.h2, &d_recon, &mut grad.reconstruction_head);
    d_h2 += params.confidence_head.backward(&cache.h2, &d_conf, &mut grad.confidence_head);
    let d_h1 = params.trunk2.backward(&cache.h1, &tanh_backward(&d_h2, &cache.h2), &mut grad.trunk2);
    let d_in = params.trunk1.backward(&cache.input, &tanh_backward(&d_h1, &cache.h1), &mut grad.trunk1);
    let d = cache.d_geo;
    Ok(PairInputGrads {
        fused_i: d_in.columns(2 * pp, d).into_owned(),
        fused_j: d_in.columns(2 * pp + d, d).into_owned(),
    })
}
