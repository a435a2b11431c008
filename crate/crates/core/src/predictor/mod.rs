//! Two-branch pointmap predictor and its training losses.

mod loss;
mod network;
mod pnp;

pub use loss::{
    geometric_loss, pixel_lattice, reprojection_loss, reprojection_loss_at_pose, GeometricLoss, ReprojectionLoss,
};
pub use network::{
    backward_pair, forward_pair, patch_tokens, GeoCache, GeoEncoder, PairCache, PairInputGrads, PairInputs,
    PairPrediction, PredictorConfig, PredictorParams,
};
pub use pnp::{estimate_pose_pnp, reprojection_cost, PnpSolution, MIN_CORRESPONDENCES};
