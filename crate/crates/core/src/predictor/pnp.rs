//! Gauss-Newton Perspective-n-Point on exact 3D-2D correspondences.

use nalgebra::{Matrix2x6, Matrix6, Vector6};

use crate::error::{Error, Result};
use crate::geometry::{skew, so3_exp, Intrinsics, Pixel, Pose, Vec3};

pub const MIN_CORRESPONDENCES: usize = 6;
pub const MAX_ITERATIONS: usize = 50;
pub const UPDATE_TOLERANCE: f64 = 1e-10;
/// Relative cost change below which the estimate counts as stationary.
pub const COST_TOLERANCE: f64 = 1e-12;
/// Consecutive cost increases tolerated before giving up.
pub const DIVERGENCE_STREAK: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PnpSolution {
    pub pose: Pose,
    /// Sum of squared reprojection errors at `pose`, pixels².
    pub cost: f64,
    pub iterations: usize,
}

fn cost_and_normal_equations(
    points: &[Vec3],
    pixels: &[Pixel],
    intrinsics: &Intrinsics,
    pose: &Pose,
) -> (f64, usize, Matrix6<f64>, Vector6<f64>) {
    let mut h = Matrix6::zeros();
    let mut g = Vector6::zeros();
    let mut cost = 0.0;
    let mut used = 0;
    for (p, obs) in points.iter().zip(pixels) {
        let pc = pose.transform(p);
        let Ok(px) = intrinsics.project_camera(&pc) else {
            continue;
        };
        let r = px - obs;
        let jp = intrinsics.projection_jacobian(&pc);
        // d pc / d (omega, delta) for the left update pc' = exp(omega) pc + delta.
        let mut j = Matrix2x6::zeros();
        j.fixed_view_mut::<2, 3>(0, 0).copy_from(&(jp * -skew(&pc)));
        j.fixed_view_mut::<2, 3>(0, 3).copy_from(&jp);
        h += j.transpose() * j;
        g += j.transpose() * r;
        cost += r.norm_squared();
        used += 1;
    }
    (cost, used, h, g)
}

/// Sum of squared reprojection errors of `points` under `pose`, skipping
/// points behind the camera.
pub fn reprojection_cost(points: &[Vec3], pixels: &[Pixel], intrinsics: &Intrinsics, pose: &Pose) -> f64 {
    cost_and_normal_equations(points, pixels, intrinsics, pose).0
}

/// Minimizes total squared reprojection error over the camera pose,
/// updating rotation by exponential-map increments.
pub fn estimate_pose_pnp(
    points: &[Vec3],
    pixels: &[Pixel],
    intrinsics: &Intrinsics,
    initial: &Pose,
) -> Result<PnpSolution> {
    if points.len() != pixels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} points vs {} pixels",
            points.len(),
            pixels.len()
        )));
    }
    if points.len() < MIN_CORRESPONDENCES {
        return Err(Error::InsufficientCorrespondences {
            required: MIN_CORRESPONDENCES,
            got: points.len(),
        });
    }
    let mut pose = *initial;
    let mut prev_cost = f64::INFINITY;
    let mut streak = 0;
    for it in 1..=MAX_ITERATIONS {
        let (cost, used, h, g) = cost_and_normal_equations(points, pixels, intrinsics, &pose);
        if used < MIN_CORRESPONDENCES {
            return Err(Error::InsufficientCorrespondences {
                required: MIN_CORRESPONDENCES,
                got: used,
            });
        }
        if prev_cost.is_finite() && (prev_cost - cost).abs() <= COST_TOLERANCE * prev_cost {
            return Ok(PnpSolution {
                pose: pose.renormalized(),
                cost,
                iterations: it,
            });
        }
        if cost > prev_cost {
            streak += 1;
            if streak >= DIVERGENCE_STREAK {
                return Err(Error::DivergedPnP { iterations: it });
            }
        } else {
            streak = 0;
        }
        prev_cost = cost;
        let Some(chol) = h.cholesky() else {
            return Err(Error::DivergedPnP { iterations: it });
        };
        let step = -chol.solve(&g);
        if !step.iter().all(|v| v.is_finite()) {
            return Err(Error::DivergedPnP { iterations: it });
        }
        let dr = so3_exp(&Vec3::new(step[0], step[1], step[2]));
        pose = Pose {
            rotation: dr * pose.rotation,
            translation: dr * pose.translation + Vec3::new(step[3], step[4], step[5]),
        };
        if step.norm() < UPDATE_TOLERANCE {
            let cost = reprojection_cost(points, pixels, intrinsics, &pose);
            return Ok(PnpSolution {
                pose: pose.renormalized(),
                cost,
                iterations: it,
            });
        }
    }
    let cost = reprojection_cost(points, pixels, intrinsics, &pose);
    Ok(PnpSolution {
        pose: pose.renormalized(),
        cost,
        iterations: MAX_ITERATIONS,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{rotation_about, rotation_angle_between};

    fn cloud() -> Vec<Vec3> {
        (0..12)
            .map(|k| {
                let a = k as f64;
                Vec3::new((a * 0.7).sin() * 1.2, (a * 1.3).cos() * 0.9, 4.0 + (a * 0.5).sin())
            })
            .collect()
    }

    fn k() -> Intrinsics {
        Intrinsics::centered(112, 112, 100.0)
    }

    #[test]
    fn identity_is_a_fixed_point() {
        let pts = cloud();
        let px: Vec<Pixel> = pts.iter().map(|p| k().project_camera(p).unwrap()).collect();
        let sol = estimate_pose_pnp(&pts, &px, &k(), &Pose::identity()).unwrap();
        assert!(rotation_angle_between(&sol.pose.rotation, &Pose::identity().rotation) < 1e-8);
        assert!(sol.pose.translation.norm() < 1e-8);
        assert!(sol.cost < 1e-16);
    }

    #[test]
    fn recovers_known_pose() {
        let truth = Pose {
            rotation: rotation_about(&Vec3::z(), 10f64.to_radians()),
            translation: Vec3::new(0.1, 0.0, 0.0),
        };
        let pts = cloud();
        let px: Vec<Pixel> = pts.iter().map(|p| k().project_camera(&truth.transform(p)).unwrap()).collect();
        let sol = estimate_pose_pnp(&pts, &px, &k(), &Pose::identity()).unwrap();
        assert!(rotation_angle_between(&sol.pose.rotation, &truth.rotation) < 1e-6);
        assert!((sol.pose.translation - truth.translation).norm() < 1e-6);
    }

    #[test]
    fn noisy_correspondences_stop_at_a_stationary_pose() {
        let pts = cloud();
        let px: Vec<Pixel> = pts
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let a = i as f64;
                k().project_camera(p).unwrap() + Pixel::new((a * 2.1).sin(), (a * 0.9).cos())
            })
            .collect();
        let sol = estimate_pose_pnp(&pts, &px, &k(), &Pose::identity()).unwrap();
        assert!(sol.iterations < MAX_ITERATIONS, "{} iterations", sol.iterations);
        let (_, _, _, g) = cost_and_normal_equations(&pts, &px, &k(), &sol.pose);
        assert!(g.norm() < 1e-4 * sol.cost.max(1.0), "gradient {:e}", g.norm());
    }

    #[test]
    fn too_few_points() {
        let pts = &cloud()[..5];
        let px = vec![Pixel::zeros(); 5];
        assert!(matches!(
            estimate_pose_pnp(pts, &px, &k(), &Pose::identity()),
            Err(Error::InsufficientCorrespondences { got: 5, .. })
        ));
    }
}
