//! Joint optimization: loss aggregation, AdamW, the training loop,
//! checkpoints and evaluation.

mod checkpoint;
mod eval;
mod model;
mod optim;
mod trainer;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CheckpointHeader, TensorEntry,
};
pub use eval::{
    evaluate, evaluate_scene, infer_pair, infer_sequence, score_sequence, AggregateReport, EvalConfig, EvalReport,
    PairOutput, SceneReport, SequenceOutput, SequenceScores, TableRow, ROW_COARSE, ROW_FULL,
};
pub use model::{EncodedFrame, Model, ModelConfig, ScheduleConfig};
pub use optim::{adamw_step, AdamWConfig, OptimState};
pub use trainer::{
    compute_step, train, StepLog, StepResult, TrainConfig, TrainOutcome, CHECKPOINT_DIR, FINAL_CHECKPOINT, LOG_FILE, TOY_LEARNING_RATE,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamSet;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_reproj: f64,
    pub lambda_geo: f64,
    pub lambda_sem: f64,
    pub lambda_diff: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_reproj: 1.0,
            lambda_geo: 1.0,
            lambda_sem: 0.5,
            lambda_diff: 0.5,
        }
    }
}

impl LossWeights {
    pub fn as_array(&self) -> [f64; 4] {
        [self.lambda_reproj, self.lambda_geo, self.lambda_sem, self.lambda_diff]
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.as_array();
        if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) || w.iter().all(|x| *x == 0.0) {
            return Err(Error::ConfigInvalid(format!(
                "loss weights must be finite, non-negative and not all zero: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Per-component loss values of one step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub reproj: f64,
    pub geo: f64,
    pub sem: f64,
    pub diff: f64,
}

impl LossComponents {
    pub fn as_array(&self) -> [f64; 4] {
        [self.reproj, self.geo, self.sem, self.diff]
    }
}

const COMPONENT_NAMES: [&str; 4] = ["L_reproj", "L_geo", "L_sem", "L_diff"];

/// Weighted sum of the four components.
pub fn total_loss(components: &LossComponents, weights: &LossWeights) -> Result<f64> {
    let c = components.as_array();
    if let Some(k) = c.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFiniteLoss(COMPONENT_NAMES[k].into()));
    }
    Ok(c.iter().zip(weights.as_array()).map(|(c, w)| c * w).sum())
}

/// Weighted sum of per-component gradients, in the same component order as
/// [`LossComponents`].
pub fn combine_gradients<P: ParamSet + Clone>(grads: [&P; 4], weights: &LossWeights) -> Result<P> {
    let n = grads[0].num_params();
    if grads.iter().any(|g| g.num_params() != n) {
        return Err(Error::ShapeMismatch("component gradients differ in layout".into()));
    }
    let mut out = crate::nn::zeros_like(grads[0]);
    for (g, w) in grads.into_iter().zip(weights.as_array()) {
        out.add_scaled(g, w);
    }
    Ok(out)
}
