//! Robust vote aggregation: mean-shift mode seeking with a Gaussian kernel,
//! per-cluster diagnostics, and low-variance cluster selection.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::votes::VoteSet;

/// Mean-shift parameters. Bandwidth is the Gaussian kernel standard
/// deviation in meters (40 mm default).
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct MeanShiftConfig {
    pub bandwidth: f64,
    pub tol: f64,
    pub max_iterations: usize,
    /// Also seed from 5 evenly spaced votes and keep the densest mode; for
    /// pathological bimodal clusters.
    #[serde(default)]
    pub multi_start: bool,
}

impl Default for MeanShiftConfig {
    fn default() -> Self {
        Self {
            bandwidth: 0.040,
            tol: 1e-4, // 0.1 mm
            max_iterations: 100,
            multi_start: false,
        }
    }
}

impl MeanShiftConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth > 0.0 && self.bandwidth.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "bandwidth must be > 0, got {}",
                self.bandwidth
            )));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidParameter(format!("tol must be > 0, got {}", self.tol)));
        }
        if self.max_iterations < 1 {
            return Err(Error::InvalidParameter("max iterations must be >= 1".into()));
        }
        Ok(())
    }
}

/// A converged mode with its iteration diagnostics.
#[derive(Clone, Copy, Debug)]
pub struct ModeResult {
    pub mode: Vec3,
    pub iterations: usize,
    pub final_shift: f64,
    /// log kernel density at the mode, comparable across starts
    pub log_density: f64,
}

/// One mean-shift run from `init`: iterates the kernel-weighted mean until
/// the shift norm drops below tolerance. Exponents are shifted by their
/// maximum before exponentiation so far-off inits do not underflow.
pub fn mean_shift_mode(points: &[Vec3], cfg: &MeanShiftConfig, init: Vec3) -> Result<ModeResult> {
    cfg.validate()?;
    if points.is_empty() {
        return Err(Error::InvalidParameter("mean-shift needs at least one point".into()));
    }
    let inv_two_sigma2 = 1.0 / (2.0 * cfg.bandwidth * cfg.bandwidth);

    let mut x = init;
    let mut iterations = 0;
    let mut shift = f64::INFINITY;
    let mut log_density = 0.0;
    while iterations < cfg.max_iterations {
        let exponents: Vec<f64> = points
            .iter()
            .map(|p| -(p - x).norm_squared() * inv_two_sigma2)
            .collect();
        let max_e = exponents.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !max_e.is_finite() {
            return Err(Error::DegenerateKernel { cluster: None });
        }
        let mut wsum = 0.0;
        let mut mean = Vec3::zeros();
        for (p, &e) in points.iter().zip(&exponents) {
            let w = (e - max_e).exp();
            wsum += w;
            mean += w * p;
        }
        mean /= wsum;
        log_density = max_e + wsum.ln();
        shift = (mean - x).norm();
        x = mean;
        iterations += 1;
        if shift < cfg.tol {
            break;
        }
    }
    Ok(ModeResult { mode: x, iterations, final_shift: shift, log_density })
}

/// Per-cluster aggregation diagnostics.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ClusterDiagnostics {
    pub vote_count: usize,
    pub iterations: usize,
    pub final_shift: f64,
    /// mean squared distance of the votes to the mode, m²
    pub variance: f64,
}

/// The M aggregated keypoint estimates in the camera frame.
#[derive(Clone, Debug)]
pub struct AggregatedKeypoints {
    estimates: Vec<Vec3>,
    diagnostics: Vec<ClusterDiagnostics>,
}

impl AggregatedKeypoints {
    pub fn estimates(&self) -> &[Vec3] {
        &self.estimates
    }

    pub fn diagnostics(&self) -> &[ClusterDiagnostics] {
        &self.diagnostics
    }

    pub fn len(&self) -> usize {
        self.estimates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.estimates.is_empty()
    }

    /// Keeps only the given cluster indices, preserving order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            estimates: indices.iter().map(|&i| self.estimates[i]).collect(),
            diagnostics: indices.iter().map(|&i| self.diagnostics[i]).collect(),
        }
    }
}

fn component_median(points: &[Vec3]) -> Vec3 {
    let mut out = Vec3::zeros();
    let mut buf: Vec<f64> = Vec::with_capacity(points.len());
    for axis in 0..3 {
        buf.clear();
        buf.extend(points.iter().map(|p| p[axis]));
        buf.sort_by(f64::total_cmp);
        let n = buf.len();
        out[axis] = if n % 2 == 1 {
            buf[n / 2]
        } else {
            0.5 * (buf[n / 2 - 1] + buf[n / 2])
        };
    }
    out
}

/// Runs mean-shift on a single vote cluster: component-wise-median start,
/// plus four spread-out extra starts when `multi_start` is set, keeping the
/// highest-density mode.
pub fn aggregate_cluster(points: &[Vec3], cfg: &MeanShiftConfig) -> Result<(Vec3, ClusterDiagnostics)> {
    let mut best = mean_shift_mode(points, cfg, component_median(points))?;
    if cfg.multi_start && points.len() > 1 {
        let starts = 5.min(points.len());
        for s in 0..starts {
            let init = points[s * points.len() / starts];
            let cand = mean_shift_mode(points, cfg, init)?;
            if cand.log_density > best.log_density {
                best = cand;
            }
        }
    }
    let variance =
        points.iter().map(|p| (p - best.mode).norm_squared()).sum::<f64>() / points.len() as f64;
    Ok((
        best.mode,
        ClusterDiagnostics {
            vote_count: points.len(),
            iterations: best.iterations,
            final_shift: best.final_shift,
            variance,
        },
    ))
}

/// Runs mean-shift on each vote cluster, initialized at the component-wise
/// median. Clusters are independent and processed in parallel.
pub fn aggregate(votes: &VoteSet, cfg: &MeanShiftConfig) -> Result<AggregatedKeypoints> {
    cfg.validate()?;
    let results: Vec<Result<(Vec3, ClusterDiagnostics)>> = (0..votes.keypoint_count())
        .into_par_iter()
        .map(|j| {
            aggregate_cluster(votes.cluster(j), cfg).map_err(|e| match e {
                Error::DegenerateKernel { .. } => Error::DegenerateKernel { cluster: Some(j) },
                other => other,
            })
        })
        .collect();

    let mut estimates = Vec::with_capacity(results.len());
    let mut diagnostics = Vec::with_capacity(results.len());
    for r in results {
        let (mode, diag) = r?;
        estimates.push(mode);
        diagnostics.push(diag);
    }
    Ok(AggregatedKeypoints { estimates, diagnostics })
}

/// Indices of the `k` clusters with the smallest vote variance about their
/// mode (ties broken by index), returned in ascending index order.
pub fn select_low_variance_clusters(agg: &AggregatedKeypoints, k: usize) -> Result<Vec<usize>> {
    if k < 3 {
        return Err(Error::InvalidParameter(format!(
            "registration needs at least 3 correspondences, got k = {k}"
        )));
    }
    if k > agg.len() {
        return Err(Error::InvalidParameter(format!(
            "k = {k} exceeds the {} clusters available",
            agg.len()
        )));
    }
    let mut order: Vec<usize> = (0..agg.len()).collect();
    order.sort_by(|&a, &b| {
        agg.diagnostics[a]
            .variance
            .total_cmp(&agg.diagnostics[b].variance)
            .then(a.cmp(&b))
    });
    let mut selected: Vec<usize> = order[..k].to_vec();
    selected.sort_unstable();
    Ok(selected)
}
