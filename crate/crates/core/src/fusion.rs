//! Semantic injection adapter: single-head cross-attention from geometric
//! query tokens to semantic key/value tokens, added back onto the geometric
//! stream.

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::ParamSet;
use crate::semantic::FeatureMap;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct AdapterConfig {
    pub d_geo: usize,
    pub d_sem: usize,
    pub d_k: usize,
    pub d_v: usize,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        Self {
            d_geo: 32,
            d_sem: 32,
            d_k: 32,
            d_v: 32,
        }
    }
}

/// Projection weights. `w_q: d_geo x d_k`, `w_k: d_sem x d_k`,
/// `w_v: d_sem x d_v`, `w_o: d_v x d_geo`.
#[derive(Clone, Debug, PartialEq)]
pub struct AdapterParams {
    pub w_q: DMatrix<f64>,
    pub w_k: DMatrix<f64>,
    pub w_v: DMatrix<f64>,
    pub w_o: DMatrix<f64>,
}

impl AdapterParams {
    /// Output projection starts at zero so the adapter is the identity on the
    /// geometric stream; the other projections are uniform in `±0.1`.
    pub fn init<R: Rng>(cfg: &AdapterConfig, rng: &mut R) -> Self {
        let mut u = |r, c| DMatrix::from_fn(r, c, |_, _| rng.gen_range(-0.1..0.1));
        Self {
            w_q: u(cfg.d_geo, cfg.d_k),
            w_k: u(cfg.d_sem, cfg.d_k),
            w_v: u(cfg.d_sem, cfg.d_v),
            w_o: DMatrix::zeros(cfg.d_v, cfg.d_geo),
        }
    }

    pub fn zeros(cfg: &AdapterConfig) -> Self {
        Self {
            w_q: DMatrix::zeros(cfg.d_geo, cfg.d_k),
            w_k: DMatrix::zeros(cfg.d_sem, cfg.d_k),
            w_v: DMatrix::zeros(cfg.d_sem, cfg.d_v),
            w_o: DMatrix::zeros(cfg.d_v, cfg.d_geo),
        }
    }

    pub fn config(&self) -> AdapterConfig {
        AdapterConfig {
            d_geo: self.w_q.nrows(),
            d_sem: self.w_k.nrows(),
            d_k: self.w_q.ncols(),
            d_v: self.w_v.ncols(),
        }
    }

    fn check(&self) -> Result<()> {
        let c = self.config();
        let ok = self.w_k.ncols() == c.d_k
            && self.w_v.nrows() == c.d_sem
            && self.w_o.nrows() == c.d_v
            && self.w_o.ncols() == c.d_geo;
        if !ok {
            return Err(Error::DimMismatch("inconsistent adapter projection shapes".into()));
        }
        if !self.all_finite() {
            return Err(Error::InvalidArgument("adapter parameters contain non-finite values".into()));
        }
        Ok(())
    }
}

impl ParamSet for AdapterParams {
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        for (name, m) in [("w_q", &self.w_q), ("w_k", &self.w_k), ("w_v", &self.w_v), ("w_o", &self.w_o)] {
            f(name, &[m.nrows(), m.ncols()], m.as_slice());
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        f("w_q", self.w_q.as_mut_slice());
        f("w_k", self.w_k.as_mut_slice());
        f("w_v", self.w_v.as_mut_slice());
        f("w_o", self.w_o.as_mut_slice());
    }
}

/// Forward state needed by [`fuse_backward`].
#[derive(Clone, Debug)]
pub struct FusionCache {
    params_fingerprint: u64,
    geo: DMatrix<f64>,
    sem: DMatrix<f64>,
    q: DMatrix<f64>,
    k: DMatrix<f64>,
    v: DMatrix<f64>,
    /// Row-stochastic attention weights, `N_geo x N_sem`.
    pub attention: DMatrix<f64>,
    attended: DMatrix<f64>,
}

#[derive(Clone, Debug)]
pub struct FusionGrads {
    pub geo: DMatrix<f64>,
    pub sem: DMatrix<f64>,
    pub params: AdapterParams,
}

fn softmax_rows(scores: &mut DMatrix<f64>) {
    for mut row in scores.row_iter_mut() {
        let max = row.max();
        row.apply(|x| *x = (*x - max).exp());
        let s = row.sum();
        row /= s;
    }
}

/// Token-level adapter: `geo` is `N x d_geo`, `sem` is `M x d_sem`.
pub fn fuse_tokens(
    geo: &DMatrix<f64>,
    sem: &DMatrix<f64>,
    params: &AdapterParams,
) -> Result<(DMatrix<f64>, FusionCache)> {
    params.check()?;
    let c = params.config();
    if geo.ncols() != c.d_geo || sem.ncols() != c.d_sem {
        return Err(Error::DimMismatch(format!(
            "tokens are {}-d geometric / {}-d semantic, adapter expects {} / {}",
            geo.ncols(),
            sem.ncols(),
            c.d_geo,
            c.d_sem
        )));
    }
    if sem.nrows() == 0 {
        return Err(Error::DimMismatch("no semantic tokens".into()));
    }
    let q = geo * &params.w_q;
    let k = sem * &params.w_k;
    let v = sem * &params.w_v;
    let mut attention = (&q * k.transpose()) / (c.d_k as f64).sqrt();
    softmax_rows(&mut attention);
    let attended = &attention * &v;
    let out = geo + &attended * &params.w_o;
    let cache = FusionCache {
        params_fingerprint: params.fingerprint(),
        geo: geo.clone(),
        sem: sem.clone(),
        q,
        k,
        v,
        attention,
        attended,
    };
    Ok((out, cache))
}

/// Fuses aligned geometric and semantic feature maps of one frame.
pub fn fuse(f_geo: &FeatureMap, f_sem: &FeatureMap, params: &AdapterParams) -> Result<(FeatureMap, FusionCache)> {
    if f_geo.num_tokens() != f_sem.num_tokens() {
        return Err(Error::DimMismatch(format!(
            "{} geometric tokens vs {} semantic tokens",
            f_geo.num_tokens(),
            f_sem.num_tokens()
        )));
    }
    let (out, cache) = fuse_tokens(&f_geo.to_matrix(), &f_sem.to_matrix(), params)?;
    if !out.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFiniteLoss("adapter output".into()));
    }
    Ok((f_geo.with_tokens(&out)?, cache))
}

/// Gradients of a scalar loss through the adapter given `dL/d output`.
pub fn fuse_backward(upstream: &DMatrix<f64>, cache: &FusionCache, params: &AdapterParams) -> Result<FusionGrads> {
    if params.fingerprint() != cache.params_fingerprint {
        return Err(Error::StaleCache);
    }
    if upstream.shape() != cache.geo.shape() {
        return Err(Error::DimMismatch(format!(
            "upstream gradient {:?} vs output {:?}",
            upstream.shape(),
            cache.geo.shape()
        )));
    }
    let d_k = params.w_q.ncols() as f64;
    let a = &cache.attention;
    let d_wo = cache.attended.tr_mul(upstream);
    let d_attended = upstream * params.w_o.transpose();
    let d_attn = &d_attended * cache.v.transpose();
    let d_v = a.tr_mul(&d_attended);
    // Softmax backward, row by row.
    let mut d_scores = a.component_mul(&d_attn);
    for (mut row, arow) in d_scores.row_iter_mut().zip(a.row_iter()) {
        let s = row.sum();
        row -= arow * s;
    }
    d_scores /= d_k.sqrt();
    let d_q = &d_scores * &cache.k;
    let d_kmat = d_scores.tr_mul(&cache.q);
    let geo = upstream + &d_q * params.w_q.transpose();
    let sem = &d_kmat * params.w_k.transpose() + &d_v * params.w_v.transpose();
    Ok(FusionGrads {
        geo,
        sem,
        params: AdapterParams {
            w_q: cache.geo.tr_mul(&d_q),
            w_k: cache.sem.tr_mul(&d_kmat),
            w_v: cache.sem.tr_mul(&d_v),
            w_o: d_wo,
        },
    })
}
