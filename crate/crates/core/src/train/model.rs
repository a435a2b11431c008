//! The full trainable model: geometric encoder, fusion adapter, two-branch
//! predictor and denoiser, plus per-frame encoding and its backward pass.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::diffusion::{DenoiserConfig, DenoiserParams, DiffusionSchedule};
use crate::error::{Error, Result};
use crate::fusion::{fuse, fuse_backward, AdapterConfig, AdapterParams, FusionCache};
use crate::geometry::Intrinsics;
use crate::image::{GrayImage, LabelMap};
use crate::nn::{zeros_like, ParamSet};
use crate::predictor::{forward_pair, GeoCache, GeoEncoder, PairCache, PairInputs, PairPrediction, PredictorConfig, PredictorParams};
use crate::seeding::{rng, stage_seed};
use crate::semantic::{synth_features, FeatureMap, FeatureSynthConfig};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            steps: crate::diffusion::DEFAULT_STEPS,
            beta_start: crate::diffusion::DEFAULT_BETA_START,
            beta_end: crate::diffusion::DEFAULT_BETA_END,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub predictor: PredictorConfig,
    pub adapter: AdapterConfig,
    pub denoiser: DenoiserConfig,
    pub features: FeatureSynthConfig,
    pub schedule: ScheduleConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let p = &self.predictor;
        let bad = |m: &str| Err(Error::ConfigInvalid(m.into()));
        if p.patch_size == 0 || p.hidden == 0 || p.d_geo == 0 || !(p.base_depth > 0.0) || !(p.time_scale > 0.0) {
            return bad("predictor sizes must be positive");
        }
        if self.adapter.d_geo != p.d_geo || self.denoiser.feature_dim != p.d_geo {
            return bad("adapter, denoiser and predictor disagree on the geometric feature width");
        }
        if self.adapter.d_sem != self.features.dim {
            return bad("adapter semantic width differs from the feature dimension");
        }
        if self.features.patch_size != p.patch_size {
            return bad("semantic and geometric patch sizes differ");
        }
        if self.adapter.d_k == 0 || self.adapter.d_v == 0 || self.denoiser.hidden == 0 {
            return bad("adapter and denoiser widths must be positive");
        }
        self.schedule()?;
        Ok(())
    }

    pub fn schedule(&self) -> Result<DiffusionSchedule> {
        let s = &self.schedule;
        DiffusionSchedule::linear(s.steps, s.beta_start, s.beta_end)
            .map_err(|e| Error::ConfigInvalid(format!("diffusion schedule: {e}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub geo: GeoEncoder,
    pub adapter: AdapterParams,
    pub predictor: PredictorParams,
    pub denoiser: DenoiserParams,
    /// Typical residual magnitude used to (de)normalize diffusion targets.
    pub residual_scale: f64,
}

impl ParamSet for Model {
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.geo.visit(f);
        self.adapter.visit(&mut |name, shape, v| f(&format!("adapter.{name}"), shape, v));
        self.predictor.visit(f);
        self.denoiser.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.geo.visit_mut(f);
        self.adapter.visit_mut(&mut |name, v| f(&format!("adapter.{name}"), v));
        self.predictor.visit_mut(f);
        self.denoiser.visit_mut(f);
    }
}

/// A frame after semantic feature synthesis, geometric encoding and fusion.
#[derive(Clone, Debug)]
pub struct EncodedFrame {
    pub frame: usize,
    pub semantic: FeatureMap,
    pub fused: FeatureMap,
    geo_cache: GeoCache,
    fusion_cache: FusionCache,
}

impl Model {
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut r = rng(stage_seed(seed, "model.init"));
        Ok(Self {
            config: *config,
            geo: GeoEncoder::init(&config.predictor, &mut r),
            adapter: AdapterParams::init(&config.adapter, &mut r),
            predictor: PredictorParams::init(&config.predictor, &mut r),
            denoiser: DenoiserParams::init(&config.denoiser, &mut r),
            residual_scale: 1.0,
        })
    }

    /// A zero-valued model of the same layout, used as a gradient buffer.
    pub fn zeros_like(&self) -> Self {
        zeros_like(self)
    }

    pub fn encode_frame(&self, image: &GrayImage, labels: &LabelMap, frame: usize) -> Result<EncodedFrame> {
        let semantic = synth_features(labels, frame, &self.config.features)?;
        let (geo, geo_cache) = self.geo.encode(image, self.config.predictor.patch_size, frame)?;
        let (fused, fusion_cache) = fuse(&geo, &semantic, &self.adapter)?;
        Ok(EncodedFrame {
            frame,
            semantic,
            fused,
            geo_cache,
            fusion_cache,
        })
    }

    pub fn predict_pair(
        &self,
        images: (&GrayImage, &GrayImage),
        frames: (&EncodedFrame, &EncodedFrame),
        intrinsics: &Intrinsics,
    ) -> Result<(PairPrediction, PairCache)> {
        let inputs = PairInputs {
            frame_i: images.0,
            frame_j: images.1,
            fused_i: &frames.0.fused,
            fused_j: &frames.1.fused,
            i: frames.0.frame,
            j: frames.1.frame,
        };
        forward_pair(&inputs, intrinsics, &self.predictor, &self.config.predictor)
    }

    /// Backpropagates `dL/d fused tokens` of one frame into the adapter and
    /// geometric encoder gradients.
    pub fn backward_frame(&self, frame: &EncodedFrame, d_fused: &DMatrix<f64>, grads: &mut Model) -> Result<()> {
        let g = fuse_backward(d_fused, &frame.fusion_cache, &self.adapter)?;
        grads.adapter.add_scaled(&g.params, 1.0);
        self.geo.backward(&frame.geo_cache, &g.geo, &mut grads.geo);
        Ok(())
    }
}
