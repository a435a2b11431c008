//! Tracking and reconstruction metrics: APD and Chamfer distance.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::pose::Vec3;
use super::trajectory::TrajectorySet;
use crate::error::{Error, Result};

/// Summary of one evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub apd_thresholds: Vec<f64>,
    pub apd_values: Vec<f64>,
    pub chamfer_cm: f64,
    pub num_points: usize,
    pub wall_time_s: f64,
}

/// Exact nearest-neighbour index: a static, implicitly stored k-d tree.
///
/// Each range `lo..hi` of `points` is a node split at its middle element
/// along `axes[mid]`; ranges of at most `LEAF` points are scanned directly.
/// Every node keeps its bounding box (at `mid`, or at `lo` for leaves) so a
/// subtree is skipped as soon as its box is farther than the best match.
pub struct PointTree {
    points: Vec<Vec3>,
    axes: Vec<u8>,
    boxes: Vec<(Vec3, Vec3)>,
}

const LEAF: usize = 8;

impl PointTree {
    pub fn new(points: &[Vec3]) -> Self {
        let mut tree = Self {
            points: points.to_vec(),
            axes: vec![0; points.len()],
            boxes: vec![(Vec3::zeros(), Vec3::zeros()); points.len()],
        };
        tree.build(0, points.len());
        tree
    }

    fn build(&mut self, lo: usize, hi: usize) {
        if lo >= hi {
            return;
        }
        let slice = &mut self.points[lo..hi];
        let mut min = Vec3::repeat(f64::INFINITY);
        let mut max = Vec3::repeat(f64::NEG_INFINITY);
        for p in slice.iter() {
            min = min.inf(p);
            max = max.sup(p);
        }
        if hi - lo <= LEAF {
            self.boxes[lo] = (min, max);
            return;
        }
        let axis = (max - min).imax();
        let mid = (hi - lo) / 2;
        slice.select_nth_unstable_by(mid, |a, b| a[axis].total_cmp(&b[axis]));
        self.axes[lo + mid] = axis as u8;
        self.boxes[lo + mid] = (min, max);
        self.build(lo, lo + mid);
        self.build(lo + mid + 1, hi);
    }

    fn box_distance(&self, key: usize, q: &Vec3) -> f64 {
        let (min, max) = &self.boxes[key];
        (0..3)
            .map(|k| {
                let d = (min[k] - q[k]).max(q[k] - max[k]).max(0.0);
                d * d
            })
            .sum()
    }

    fn search(&self, lo: usize, hi: usize, q: &Vec3, best: &mut f64) {
        if lo >= hi {
            return;
        }
        if hi - lo <= LEAF {
            if self.box_distance(lo, q) < *best {
                for p in &self.points[lo..hi] {
                    *best = best.min((p - q).norm_squared());
                }
            }
            return;
        }
        let mid = lo + (hi - lo) / 2;
        if self.box_distance(mid, q) >= *best {
            return;
        }
        let p = &self.points[mid];
        *best = best.min((p - q).norm_squared());
        let axis = self.axes[mid] as usize;
        if q[axis] < p[axis] {
            self.search(lo, mid, q, best);
            self.search(mid + 1, hi, q, best);
        } else {
            self.search(mid + 1, hi, q, best);
            self.search(lo, mid, q, best);
        }
    }

    /// Distance from `q` to the closest indexed point (infinite when empty).
    pub fn nearest_distance(&self, q: &Vec3) -> f64 {
        let mut best = f64::INFINITY;
        self.search(0, self.points.len(), q, &mut best);
        best.sqrt()
    }
}

fn check_finite(points: &[Vec3]) -> Result<()> {
    if points.iter().all(|p| p.iter().all(|c| c.is_finite())) {
        Ok(())
    } else {
        Err(Error::InvalidArgument("point set contains non-finite coordinates".into()))
    }
}

/// Mean distance from each point of `from` to its nearest neighbour in `to`.
/// Per-point distances are computed in parallel and summed in input order.
fn directed_mean(from: &[Vec3], to: &PointTree) -> f64 {
    let dists: Vec<f64> = from.par_iter().map(|p| to.nearest_distance(p)).collect();
    dists.iter().sum::<f64>() / from.len() as f64
}

/// Symmetric Chamfer distance in centimeters between two point sets in meters,
/// using non-squared Euclidean nearest-neighbour distances.
pub fn chamfer_distance(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySet);
    }
    check_finite(a)?;
    check_finite(b)?;
    let ab = directed_mean(a, &PointTree::new(b));
    let ba = directed_mean(b, &PointTree::new(a));
    Ok(100.0 * 0.5 * (ab + ba))
}

/// Percentage of truth-visible (query, frame) pairs whose 3D error is below
/// each threshold (meters).
pub fn apd(predicted: &TrajectorySet, truth: &TrajectorySet, thresholds: &[f64]) -> Result<Vec<f64>> {
    if predicted.num_queries != truth.num_queries || predicted.frames != truth.frames {
        return Err(Error::ShapeMismatch(format!(
            "predicted {}x{} vs truth {}x{}",
            predicted.num_queries, predicted.frames, truth.num_queries, truth.frames
        )));
    }
    validate_thresholds(thresholds)?;
    let errors: Vec<f64> = truth
        .positions
        .iter()
        .zip(&predicted.positions)
        .zip(&truth.visible)
        .filter_map(|((t, p), &vis)| vis.then(|| (p - t).norm()))
        .collect();
    if errors.is_empty() {
        return Err(Error::NoVisiblePoints);
    }
    let n = errors.len() as f64;
    Ok(thresholds
        .iter()
        .map(|&delta| 100.0 * errors.iter().filter(|&&e| e < delta).count() as f64 / n)
        .collect())
}

pub fn validate_thresholds(thresholds: &[f64]) -> Result<()> {
    let ok = !thresholds.is_empty()
        && thresholds.iter().all(|t| t.is_finite() && *t > 0.0)
        && thresholds.windows(2).all(|w| w[0] < w[1]);
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "thresholds must be positive and strictly increasing, got {thresholds:?}"
        )))
    }
}

/// Column header for an APD threshold, e.g. `APD@0.1m`.
pub fn apd_header(threshold: f64) -> String {
    format!("APD@{threshold}m")
}

/// Renders rows of APD percentages as a plain-text table.
pub fn format_apd_table(thresholds: &[f64], rows: &[(String, Vec<f64>)]) -> String {
    let name_width = rows
        .iter()
        .map(|(n, _)| n.len())
        .chain(std::iter::once("Method".len()))
        .max()
        .unwrap_or(6);
    let mut out = format!("{:<name_width$}", "Method");
    for t in thresholds {
        out.push_str(&format!(" | {:>9}", apd_header(*t)));
    }
    out.push('\n');
    for (name, values) in rows {
        out.push_str(&format!("{name:<name_width$}"));
        for v in values {
            out.push_str(&format!(" | {:>8.1}%", v));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute(a: &[Vec3], b: &[Vec3]) -> f64 {
        let d = |from: &[Vec3], to: &[Vec3]| {
            from.iter()
                .map(|p| to.iter().map(|q| (p - q).norm()).fold(f64::INFINITY, f64::min))
                .sum::<f64>()
                / from.len() as f64
        };
        50.0 * (d(a, b) + d(b, a))
    }

    #[test]
    fn chamfer_identical_sets_is_zero() {
        let a = vec![Vec3::new(0.0, 1.0, 2.0), Vec3::new(-1.0, 0.5, 3.0)];
        assert_eq!(chamfer_distance(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn chamfer_single_points() {
        let a = [Vec3::zeros()];
        let b = [Vec3::new(3.0, 4.0, 0.0)];
        assert!((chamfer_distance(&a, &b).unwrap() - 500.0).abs() < 1e-12);
    }

    #[test]
    fn chamfer_empty_is_error() {
        assert!(matches!(chamfer_distance(&[], &[Vec3::zeros()]), Err(Error::EmptySet)));
    }

    #[test]
    fn chamfer_handles_duplicate_x() {
        let a: Vec<Vec3> = (0..20).map(|i| Vec3::new(1.0, i as f64 * 0.1, 0.0)).collect();
        let b: Vec<Vec3> = (0..7).map(|i| Vec3::new(1.0, i as f64 * 0.37, 0.2)).collect();
        let got = chamfer_distance(&a, &b).unwrap();
        assert!((got - brute(&a, &b)).abs() <= 1e-9 * got);
    }

    #[test]
    fn apd_zero_error_and_offset() {
        let pos: Vec<Vec3> = (0..6).map(|i| Vec3::new(i as f64, 0.0, 1.0)).collect();
        let truth = TrajectorySet::new(3, 2, pos.clone(), vec![true; 6]).unwrap();
        let th = [0.1, 0.3, 0.5];
        assert_eq!(apd(&truth, &truth, &th).unwrap(), vec![100.0; 3]);
        let shifted = TrajectorySet::new(3, 2, pos.iter().map(|p| p + Vec3::new(0.2, 0.0, 0.0)).collect(), vec![true; 6])
            .unwrap();
        assert_eq!(apd(&shifted, &truth, &th).unwrap(), vec![0.0, 100.0, 100.0]);
    }

    #[test]
    fn apd_ignores_invisible_pairs() {
        let truth = TrajectorySet::new(1, 2, vec![Vec3::zeros(); 2], vec![true, false]).unwrap();
        let pred = TrajectorySet::new(1, 2, vec![Vec3::zeros(), Vec3::new(9.0, 0.0, 0.0)], vec![true, true]).unwrap();
        assert_eq!(apd(&pred, &truth, &[0.1]).unwrap(), vec![100.0]);
    }

    #[test]
    fn apd_errors() {
        let a = TrajectorySet::new(1, 2, vec![Vec3::zeros(); 2], vec![true; 2]).unwrap();
        let b = TrajectorySet::new(2, 1, vec![Vec3::zeros(); 2], vec![true; 2]).unwrap();
        assert!(matches!(apd(&a, &b, &[0.1]), Err(Error::ShapeMismatch(_))));
        assert!(apd(&a, &a, &[0.3, 0.1]).is_err());
    }

    #[test]
    fn table_renders_reference_row() {
        let table = format_apd_table(
            &[0.1, 0.3, 0.5],
            &[("St4RTrack".to_string(), vec![35.1, 67.4, 78.5])],
        );
        let mut lines = table.lines();
        let header = lines.next().unwrap();
        assert!(header.contains("APD@0.1m") && header.contains("APD@0.3m") && header.contains("APD@0.5m"));
        let row = lines.next().unwrap();
        assert!(row.starts_with("St4RTrack"));
        assert!(row.contains("35.1%") && row.contains("67.4%") && row.contains("78.5%"));
    }
}
