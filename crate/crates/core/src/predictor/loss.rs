use crate::error::{Error, Result};
use crate::geometry::{pixel_center, Intrinsics, Pixel, Pointmap, Pose, Vec3};

use super::network::PairPrediction;
use super::pnp::{estimate_pose_pnp, PnpSolution};

/// Geometric regression loss and its gradients.
#[derive(Clone, Debug)]
pub struct GeometricLoss {
    pub value: f64,
    pub d_tracking: Vec<Vec3>,
    pub d_reconstruction: Vec<Vec3>,
    pub d_confidence: Vec<f64>,
}

fn branch_mse(pred: &Pointmap, gt: &Pointmap, grad: &mut [Vec3]) -> Result<(f64, usize)> {
    if !pred.same_shape(gt) {
        return Err(Error::ShapeMismatch(format!(
            "prediction {}x{} vs ground truth {}x{}",
            pred.width, pred.height, gt.width, gt.height
        )));
    }
    let n = gt.num_valid();
    if n == 0 {
        return Ok((0.0, 0));
    }
    let mut sum = 0.0;
    for (k, (p, g)) in pred.points.iter().zip(&gt.points).enumerate() {
        if gt.valid[k] {
            let e = p - g;
            sum += e.norm_squared();
            grad[k] = e * (2.0 / n as f64);
        }
    }
    Ok((sum / n as f64, n))
}

/// Mean squared Euclidean error over ground-truth-valid pixels, summed over
/// the tracking and reconstruction branches. Confidence is pulled toward a
/// constant target of one through a squared log penalty, which vanishes at
/// the target.
pub fn geometric_loss(pred: &PairPrediction, gt_tracking: &Pointmap, gt_recon: &Pointmap) -> Result<GeometricLoss> {
    let np = pred.tracking.len();
    let mut d_tracking = vec![Vec3::zeros(); np];
    let mut d_reconstruction = vec![Vec3::zeros(); pred.reconstruction.len()];
    let (lt, nt) = branch_mse(&pred.tracking, gt_tracking, &mut d_tracking)?;
    let (lr, nr) = branch_mse(&pred.reconstruction, gt_recon, &mut d_reconstruction)?;
    if nt + nr == 0 {
        return Err(Error::NoValidPixels);
    }
    let mut value = lt + lr;
    let mut d_confidence = vec![0.0; pred.confidence.len()];
    if !pred.confidence.is_empty() {
        let m = pred.confidence.len() as f64;
        for (g, &c) in d_confidence.iter_mut().zip(&pred.confidence) {
            let l = c.ln();
            value += l * l / m;
            *g = 2.0 * l / (c * m);
        }
    }
    Ok(GeometricLoss {
        value,
        d_tracking,
        d_reconstruction,
        d_confidence,
    })
}

/// Pixel centres of a `width x height` image, row-major.
pub fn pixel_lattice(width: usize, height: usize) -> Vec<Pixel> {
    (0..width * height).map(|p| pixel_center(p % width, p / width)).collect()
}

#[derive(Clone, Debug)]
pub struct ReprojectionLoss {
    pub value: f64,
    pub d_points: Vec<Vec3>,
    pub pnp: Option<PnpSolution>,
}

/// Mean squared pixel error of the valid points against `observed` with the
/// camera pose held fixed; gradients flow to the points only.
pub fn reprojection_loss_at_pose(
    recon: &Pointmap,
    observed: &[Pixel],
    intrinsics: &Intrinsics,
    pose: &Pose,
) -> Result<ReprojectionLoss> {
    if observed.len() != recon.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} observed pixels for {} points",
            observed.len(),
            recon.len()
        )));
    }
    let mut terms = Vec::new();
    for (k, (p, obs)) in recon.points.iter().zip(observed).enumerate() {
        if !recon.valid[k] {
            continue;
        }
        let pc = pose.transform(p);
        if let Ok(px) = intrinsics.project_camera(&pc) {
            let r = px - obs;
            let j = intrinsics.projection_jacobian(&pc) * pose.rotation;
            terms.push((k, r.norm_squared(), j.transpose() * r * 2.0));
        }
    }
    if terms.is_empty() {
        return Err(Error::NoValidPixels);
    }
    let n = terms.len() as f64;
    let mut d_points = vec![Vec3::zeros(); recon.len()];
    let mut value = 0.0;
    for (k, e, g) in terms {
        value += e;
        d_points[k] = g / n;
    }
    Ok(ReprojectionLoss {
        value: value / n,
        d_points,
        pnp: None,
    })
}

/// Estimates the pose of the reconstruction's own camera by PnP against its
/// pixel lattice, then scores reprojection at that pose.
pub fn reprojection_loss(pred: &PairPrediction, intrinsics: &Intrinsics, initial: &Pose) -> Result<ReprojectionLoss> {
    let recon = &pred.reconstruction;
    let lattice = pixel_lattice(recon.width, recon.height);
    let (pts, px): (Vec<Vec3>, Vec<Pixel>) = recon
        .points
        .iter()
        .zip(&lattice)
        .zip(&recon.valid)
        .filter_map(|((p, l), &v)| v.then_some((*p, *l)))
        .unzip();
    let sol = estimate_pose_pnp(&pts, &px, intrinsics, initial)?;
    let mut loss = reprojection_loss_at_pose(recon, &lattice, intrinsics, &sol.pose)?;
    loss.pnp = Some(sol);
    Ok(loss)
}
