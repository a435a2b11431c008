//! Geometric primitives and evaluation metrics.

mod camera;
mod metrics;
mod ply;
mod pointmap;
mod pose;
mod trajectory;

pub use camera::{pixel_center, project, CameraModel, Intrinsics, Pixel, DEPTH_EPSILON};
pub use metrics::{
    apd, apd_header, chamfer_distance, format_apd_table, validate_thresholds, MetricReport, PointTree,
};
pub use ply::{read_ascii_ply, write_ascii_ply};
pub use pointmap::{Pointmap, PointmapRole};
pub use pose::{
    compose_pose, invert_pose, is_rotation, look_at, rotation_about, rotation_angle_between, skew, so3_exp, Pose,
    Vec3, ORTHONORMAL_TOLERANCE,
};
pub use trajectory::TrajectorySet;
