//! Pose accuracy metrics: ADD, symmetric ADD-S, the 10%-of-diameter
//! correctness criterion, and keypoint regression error statistics.
//! Metrics are in meters here; reports convert to millimeters.

use serde::{Deserialize, Serialize};

use crate::geometry::{Pose, Vec3};
use crate::keypoints::{KeypointSet, PointCloud};
use crate::spatial::KdTree;

/// Which distance enters the correctness criterion.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoseMetric {
    Add,
    Adds,
}

/// Mean distance between model points under the estimated and ground-truth
/// poses, with identity point matching.
pub fn add_metric(model: &PointCloud, estimated: &Pose, ground_truth: &Pose) -> f64 {
    let n = model.len() as f64;
    model
        .points()
        .iter()
        .map(|p| (estimated.transform(p) - ground_truth.transform(p)).norm())
        .sum::<f64>()
        / n
}

/// Symmetric variant: each estimated point is matched to the closest
/// ground-truth-transformed point (exact nearest neighbors).
pub fn adds_metric(model: &PointCloud, estimated: &Pose, ground_truth: &Pose) -> f64 {
    let gt_points: Vec<Vec3> = model.points().iter().map(|p| ground_truth.transform(p)).collect();
    let tree = KdTree::build(&gt_points);
    let n = model.len() as f64;
    model
        .points()
        .iter()
        .map(|p| tree.nearest(&estimated.transform(p)).map(|(_, d)| d).unwrap_or(f64::INFINITY))
        .sum::<f64>()
        / n
}

/// Strictly less than 10% of the object diameter (same units on both sides).
pub fn pose_correct(metric_value: f64, diameter: f64) -> bool {
    debug_assert!(diameter > 0.0);
    metric_value < 0.1 * diameter
}

/// Keypoint regression error statistics, meters. Std is the population
/// standard deviation.
#[derive(Clone, Debug, Serialize)]
pub struct RegressionStats {
    pub mean: f64,
    pub std: f64,
    pub per_point: Vec<f64>,
}

pub fn regression_error_stats(
    estimates: &[Vec3],
    ground_truth: &Pose,
    keypoints: &KeypointSet,
) -> RegressionStats {
    assert_eq!(estimates.len(), keypoints.len(), "estimate/keypoint count mismatch");
    let per_point: Vec<f64> = estimates
        .iter()
        .zip(keypoints.points())
        .map(|(e, x)| (e - ground_truth.transform(x)).norm())
        .collect();
    let n = per_point.len() as f64;
    let mean = per_point.iter().sum::<f64>() / n;
    let var = per_point.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n;
    RegressionStats { mean, std: var.sqrt(), per_point }
}
