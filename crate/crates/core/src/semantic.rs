//! Synthetic semantic feature field, continuous feature lookup and the
//! semantic consistency loss between a query frame and a tracked target frame.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::geometry::{pixel_center, CameraModel, Pixel, Pointmap, Vec3};
use crate::image::LabelMap;
use crate::seeding::{mix, rng};

pub const DEFAULT_PATCH_SIZE: usize = 14;
pub const DEFAULT_SIGMA_FEAT: f64 = 0.05;
pub const DEFAULT_EPS_NORM: f64 = 1e-8;
/// Per-term loss assigned to tracks that land behind the target camera.
pub const BEHIND_CAMERA_PENALTY: f64 = 2.0;

/// `patch_width x patch_height` grid of `dim`-vectors, token-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub patch_width: usize,
    pub patch_height: usize,
    pub dim: usize,
    pub patch_size: usize,
    pub frame: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(
        patch_width: usize,
        patch_height: usize,
        dim: usize,
        patch_size: usize,
        frame: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        if data.len() != patch_width * patch_height * dim {
            return Err(Error::ShapeMismatch(format!(
                "feature map {patch_width}x{patch_height}x{dim} got {} values",
                data.len()
            )));
        }
        if patch_width == 0 || patch_height == 0 || dim == 0 || patch_size == 0 {
            return Err(Error::InvalidArgument("feature map dimensions must be positive".into()));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("feature map contains non-finite values".into()));
        }
        Ok(Self {
            patch_width,
            patch_height,
            dim,
            patch_size,
            frame,
            data,
        })
    }

    pub fn num_tokens(&self) -> usize {
        self.patch_width * self.patch_height
    }

    #[inline]
    pub fn token(&self, index: usize) -> &[f64] {
        &self.data[index * self.dim..(index + 1) * self.dim]
    }

    #[inline]
    pub fn at(&self, px: usize, py: usize) -> &[f64] {
        self.token(py * self.patch_width + px)
    }

    pub fn covers(&self, width: usize, height: usize) -> bool {
        self.patch_width * self.patch_size >= width && self.patch_height * self.patch_size >= height
    }

    /// Tokens as an `N x dim` matrix.
    pub fn to_matrix(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_row_slice(self.num_tokens(), self.dim, &self.data)
    }

    /// Same grid geometry, new token values from an `N x dim'` matrix.
    pub fn with_tokens(&self, tokens: &nalgebra::DMatrix<f64>) -> Result<Self> {
        if tokens.nrows() != self.num_tokens() {
            return Err(Error::DimMismatch(format!(
                "{} tokens for a {}-token grid",
                tokens.nrows(),
                self.num_tokens()
            )));
        }
        let mut data = Vec::with_capacity(tokens.len());
        for r in 0..tokens.nrows() {
            data.extend(tokens.row(r).iter());
        }
        Self::new(self.patch_width, self.patch_height, tokens.ncols(), self.patch_size, self.frame, data)
    }
}

/// Parameters of the synthetic semantic backbone.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct FeatureSynthConfig {
    pub dim: usize,
    pub patch_size: usize,
    pub sigma_feat: f64,
    /// Seeds the label embeddings; shared by every scene like a frozen backbone.
    pub seed: u64,
}

impl Default for FeatureSynthConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            patch_size: DEFAULT_PATCH_SIZE,
            sigma_feat: DEFAULT_SIGMA_FEAT,
            seed: 0x5EED_D1A0,
        }
    }
}

const NOISE_TAG: u64 = 0x4E01_5E00;

/// Unit-norm embedding of a semantic label under `seed`.
pub fn label_embedding(seed: u64, label: u8, dim: usize) -> Vec<f64> {
    let mut r = rng(mix(seed, label as u64));
    let mut v: Vec<f64> = (0..dim).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    v
}

/// Patch features for one frame: the coverage-weighted mean of the label
/// embeddings inside each patch, plus Gaussian noise of total magnitude
/// about `sigma_feat`, renormalized to unit length.
pub fn synth_features(labels: &LabelMap, frame: usize, cfg: &FeatureSynthConfig) -> Result<FeatureMap> {
    if cfg.dim < 8 {
        return Err(Error::InvalidArgument(format!("feature dim {} < 8", cfg.dim)));
    }
    if cfg.patch_size == 0 || labels.width == 0 || labels.height == 0 {
        return Err(Error::InvalidArgument("empty label map or zero patch size".into()));
    }
    let ps = cfg.patch_size;
    let pw = labels.width.div_ceil(ps);
    let ph = labels.height.div_ceil(ps);
    let mut table: Vec<Option<Vec<f64>>> = vec![None; 256];
    let mut noise_rng = rng(mix(mix(cfg.seed, NOISE_TAG), frame as u64));
    let noise_std = cfg.sigma_feat / (cfg.dim as f64).sqrt();
    let mut data = Vec::with_capacity(pw * ph * cfg.dim);
    let mut counts = [0usize; 256];
    for py in 0..ph {
        for px in 0..pw {
            counts.iter_mut().for_each(|c| *c = 0);
            let (x0, x1) = (px * ps, ((px + 1) * ps).min(labels.width));
            let (y0, y1) = (py * ps, ((py + 1) * ps).min(labels.height));
            for y in y0..y1 {
                for x in x0..x1 {
                    counts[labels.get(x, y) as usize] += 1;
                }
            }
            let total = ((x1 - x0) * (y1 - y0)) as f64;
            let mut feat = vec![0.0; cfg.dim];
            for (label, &c) in counts.iter().enumerate() {
                if c == 0 {
                    continue;
                }
                let emb = table[label].get_or_insert_with(|| label_embedding(cfg.seed, label as u8, cfg.dim));
                let w = c as f64 / total;
                feat.iter_mut().zip(emb.iter()).for_each(|(f, e)| *f += w * e);
            }
            if cfg.sigma_feat > 0.0 {
                for f in feat.iter_mut() {
                    *f += noise_std * noise_rng.sample::<f64, _>(StandardNormal);
                }
            }
            let n = feat.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 0.0 {
                feat.iter_mut().for_each(|x| *x /= n);
            }
            data.extend(feat);
        }
    }
    FeatureMap::new(pw, ph, cfg.dim, ps, frame, data)
}

/// Bilinear stencil over patch centres for a continuous pixel position.
struct Stencil {
    idx: [usize; 4],
    w: [f64; 4],
    /// d(weights)/du and d(weights)/dv.
    dw_du: [f64; 4],
    dw_dv: [f64; 4],
}

fn axis(coord: f64, patch_size: usize, cells: usize) -> (usize, usize, f64, f64) {
    // Patch centres sit at (k + 0.5) * patch_size in pixel units.
    let g = coord / patch_size as f64 - 0.5;
    let max = (cells - 1) as f64;
    if cells == 1 {
        return (0, 0, 0.0, 0.0);
    }
    let (g, active) = if g <= 0.0 {
        (0.0, false)
    } else if g >= max {
        (max, false)
    } else {
        (g, true)
    };
    let i0 = (g.floor() as usize).min(cells - 2);
    let f = g - i0 as f64;
    let df = if active { 1.0 / patch_size as f64 } else { 0.0 };
    (i0, i0 + 1, f, df)
}

fn stencil(fm: &FeatureMap, pixel: &Pixel) -> Stencil {
    let (x0, x1, fx, dfx) = axis(pixel.x, fm.patch_size, fm.patch_width);
    let (y0, y1, fy, dfy) = axis(pixel.y, fm.patch_size, fm.patch_height);
    let pw = fm.patch_width;
    Stencil {
        idx: [y0 * pw + x0, y0 * pw + x1, y1 * pw + x0, y1 * pw + x1],
        w: [(1.0 - fx) * (1.0 - fy), fx * (1.0 - fy), (1.0 - fx) * fy, fx * fy],
        dw_du: [-dfx * (1.0 - fy), dfx * (1.0 - fy), -dfx * fy, dfx * fy],
        dw_dv: [-(1.0 - fx) * dfy, -fx * dfy, (1.0 - fx) * dfy, fx * dfy],
    }
}

/// Bilinear lookup between the four surrounding patch centres. Positions
/// outside the centre grid are clamped to its border.
pub fn sample_feature(fm: &FeatureMap, pixel: &Pixel) -> Vec<f64> {
    let s = stencil(fm, pixel);
    let mut out = vec![0.0; fm.dim];
    for k in 0..4 {
        if s.w[k] != 0.0 {
            let t = fm.token(s.idx[k]);
            out.iter_mut().zip(t).for_each(|(o, v)| *o += s.w[k] * v);
        }
    }
    out
}

/// Feature plus its derivatives with respect to the pixel's u and v.
pub fn sample_feature_with_grad(fm: &FeatureMap, pixel: &Pixel) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let s = stencil(fm, pixel);
    let mut f = vec![0.0; fm.dim];
    let mut du = vec![0.0; fm.dim];
    let mut dv = vec![0.0; fm.dim];
    for k in 0..4 {
        let t = fm.token(s.idx[k]);
        for d in 0..fm.dim {
            f[d] += s.w[k] * t[d];
            du[d] += s.dw_du[k] * t[d];
            dv[d] += s.dw_dv[k] * t[d];
        }
    }
    (f, du, dv)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    #[default]
    Mean,
    Sum,
}

#[derive(Clone, Debug)]
pub struct SemanticLossConfig {
    /// Source-frame pixels `(x, y)` the loss is evaluated over.
    pub query_domain: Vec<(usize, usize)>,
    pub eps_norm: f64,
    pub reduction: Reduction,
}

impl SemanticLossConfig {
    /// Every `stride`-th pixel in both directions.
    pub fn strided(width: usize, height: usize, stride: usize) -> Self {
        let stride = stride.max(1);
        let query_domain = (0..height)
            .step_by(stride)
            .flat_map(|y| (0..width).step_by(stride).map(move |x| (x, y)))
            .collect();
        Self {
            query_domain,
            eps_norm: DEFAULT_EPS_NORM,
            reduction: Reduction::Mean,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SemanticLoss {
    pub value: f64,
    /// Gradient with respect to each tracked point (zero outside the query domain).
    pub grad: Vec<Vec3>,
    /// Number of terms that landed behind the target camera.
    pub behind_camera: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// One minus the cosine between query-frame features and target-frame
/// features sampled where each tracked point projects, averaged (or summed)
/// over the query domain, with the analytic gradient w.r.t. tracked points.
pub fn semantic_consistency_loss(
    f_src: &FeatureMap,
    f_dst: &FeatureMap,
    tracking: &Pointmap,
    camera_j: &CameraModel,
    cfg: &SemanticLossConfig,
) -> Result<SemanticLoss> {
    if f_src.dim != f_dst.dim {
        return Err(Error::ShapeMismatch(format!("feature dims {} vs {}", f_src.dim, f_dst.dim)));
    }
    if !f_src.covers(tracking.width, tracking.height) || !f_dst.covers(tracking.width, tracking.height) {
        return Err(Error::ShapeMismatch("feature grids do not cover the pointmap".into()));
    }
    if tracking.source_frame != f_src.frame || tracking.target_time != f_dst.frame {
        return Err(Error::ShapeMismatch(format!(
            "tracking pointmap ({} -> {}) does not match feature frames ({} -> {})",
            tracking.source_frame, tracking.target_time, f_src.frame, f_dst.frame
        )));
    }
    if cfg.query_domain.is_empty() {
        return Err(Error::EmptyOmega);
    }
    if let Some(&(x, y)) = cfg.query_domain.iter().find(|&&(x, y)| x >= tracking.width || y >= tracking.height) {
        return Err(Error::InvalidArgument(format!("query pixel ({x}, {y}) outside the image")));
    }
    let terms: Vec<(usize, f64, Option<Vec3>)> = cfg
        .query_domain
        .iter()
        .filter_map(|&(x, y)| {
            let idx = tracking.index(x, y);
            tracking.valid[idx].then_some((x, y, idx))
        })
        .map(|(x, y, idx)| {
            let a = sample_feature(f_src, &pixel_center(x, y));
            match camera_j.project_with_jacobian(&tracking.points[idx]) {
                Err(_) => (idx, BEHIND_CAMERA_PENALTY, None),
                Ok((px, jac)) => {
                    let (b, db_du, db_dv) = sample_feature_with_grad(f_dst, &px);
                    let na = dot(&a, &a).sqrt().max(cfg.eps_norm);
                    let nb_raw = dot(&b, &b).sqrt();
                    let nb = nb_raw.max(cfg.eps_norm);
                    let cos = dot(&a, &b) / (na * nb);
                    // d cos / d b
                    let g: Vec<f64> = if nb_raw > cfg.eps_norm {
                        a.iter().zip(&b).map(|(ai, bi)| ai / (na * nb) - cos * bi / (nb * nb)).collect()
                    } else {
                        a.iter().map(|ai| ai / (na * nb)).collect()
                    };
                    let d_u = -dot(&g, &db_du);
                    let d_v = -dot(&g, &db_dv);
                    let grad = jac.row(0).transpose() * d_u + jac.row(1).transpose() * d_v;
                    (idx, 1.0 - cos, Some(grad))
                }
            }
        })
        .collect();
    if terms.is_empty() {
        return Err(Error::EmptyOmega);
    }
    let scale = match cfg.reduction {
        Reduction::Mean => 1.0 / terms.len() as f64,
        Reduction::Sum => 1.0,
    };
    let mut grad = vec![Vec3::zeros(); tracking.len()];
    let mut total = 0.0;
    let mut behind_camera = 0;
    for (idx, value, g) in terms {
        total += value;
        match g {
            Some(g) => grad[idx] += g * scale,
            None => behind_camera += 1,
        }
    }
    Ok(SemanticLoss {
        value: total * scale,
        grad,
        behind_camera,
    })
}
