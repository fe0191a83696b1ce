//! Pose recovery from 3D-3D correspondences: closed-form weighted Procrustes
//! via SVD, IRLS with Tukey biweight reweighting, and point-to-point ICP
//! refinement against the model cloud.

use nalgebra::{Matrix3, SVD};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{rotation_to_axis_angle, Mat3, Pose, Vec3};
use crate::keypoints::PointCloud;
use crate::spatial::KdTree;

/// Ratio of second to first singular value below which the cross-covariance
/// is considered degenerate (collinear points).
const DEGENERACY_RATIO: f64 = 1e-12;
/// Tukey biweight tuning constant, in units of the robust scale.
const TUKEY_C: f64 = 4.685;
/// MAD-to-sigma factor for Gaussian residuals.
const MAD_SCALE: f64 = 1.4826;

/// Paired world/camera points with optional non-negative weights.
#[derive(Clone, Debug)]
pub struct CorrespondenceSet {
    world: Vec<Vec3>,
    camera: Vec<Vec3>,
    weights: Option<Vec<f64>>,
}

impl CorrespondenceSet {
    pub fn new(world: Vec<Vec3>, camera: Vec<Vec3>) -> Result<Self> {
        if world.len() != camera.len() {
            return Err(Error::InvalidParameter(format!(
                "{} world points vs {} camera points",
                world.len(),
                camera.len()
            )));
        }
        if world.len() < 3 {
            return Err(Error::InvalidParameter(format!(
                "registration needs at least 3 correspondences, got {}",
                world.len()
            )));
        }
        Ok(Self { world, camera, weights: None })
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.world.len() {
            return Err(Error::InvalidParameter("weight count mismatch".into()));
        }
        if weights.iter().any(|&w| w < 0.0 || !w.is_finite()) {
            return Err(Error::InvalidParameter("weights must be finite and >= 0".into()));
        }
        self.weights = Some(weights);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.world.len()
    }

    pub fn is_empty(&self) -> bool {
        self.world.is_empty()
    }

    pub fn world(&self) -> &[Vec3] {
        &self.world
    }

    pub fn camera(&self) -> &[Vec3] {
        &self.camera
    }
}

/// A recovered pose with its residual diagnostics.
#[derive(Clone, Debug)]
pub struct RegistrationResult {
    pub pose: Pose,
    pub rms: f64,
    pub residuals: Vec<f64>,
    pub iterations: usize,
    /// set when IRLS fell back to the unweighted solution (zero MAD with
    /// nonzero residuals, or all robust weights vanished)
    pub irls_fallback: bool,
}

fn residuals_for(pose: &Pose, world: &[Vec3], camera: &[Vec3]) -> (Vec<f64>, f64) {
    let residuals: Vec<f64> = world
        .iter()
        .zip(camera)
        .map(|(x, y)| (pose.transform(x) - y).norm())
        .collect();
    let rms = (residuals.iter().map(|r| r * r).sum::<f64>() / residuals.len() as f64).sqrt();
    (residuals, rms)
}

fn solve_weighted(world: &[Vec3], camera: &[Vec3], weights: Option<&[f64]>) -> Result<Pose> {
    let n = world.len();
    let w_at = |i: usize| weights.map_or(1.0, |w| w[i]);
    let wsum: f64 = (0..n).map(w_at).sum();
    if wsum <= 0.0 {
        return Err(Error::DegenerateGeometry("all correspondence weights are zero".into()));
    }

    let mut cw = Vec3::zeros();
    let mut cc = Vec3::zeros();
    for i in 0..n {
        cw += w_at(i) * world[i];
        cc += w_at(i) * camera[i];
    }
    cw /= wsum;
    cc /= wsum;

    // weighted cross-covariance H = Σ w (x - x̄)(y - ȳ)ᵀ
    let mut h = Matrix3::zeros();
    for i in 0..n {
        let x = world[i] - cw;
        let y = camera[i] - cc;
        h += w_at(i) * x * y.transpose();
    }

    let svd = SVD::new(h, true, true);
    let sv = &svd.singular_values;
    if sv[1] < DEGENERACY_RATIO * sv[0] || sv[0] == 0.0 {
        return Err(Error::DegenerateGeometry(format!(
            "cross-covariance singular values {:.3e}, {:.3e}: points are collinear",
            sv[0], sv[1]
        )));
    }
    let u = svd.u.unwrap();
    let v_t = svd.v_t.unwrap();
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let rotation: Mat3 = v * Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, d)) * u.transpose();
    let translation = cc - rotation * cw;
    Ok(Pose::from_parts(rotation, translation))
}

/// Closed-form weighted Procrustes: the pose minimizing Σ wⱼ‖T·Xⱼ − Yⱼ‖²,
/// with the SVD reflection branch corrected to keep det(R) = +1.
pub fn procrustes_svd(c: &CorrespondenceSet) -> Result<RegistrationResult> {
    let pose = solve_weighted(&c.world, &c.camera, c.weights.as_deref())?;
    let (residuals, rms) = residuals_for(&pose, &c.world, &c.camera);
    Ok(RegistrationResult { pose, rms, residuals, iterations: 1, irls_fallback: false })
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn pose_change(a: &Pose, b: &Pose) -> f64 {
    let delta = b.compose(&a.inverse());
    let (_, angle) = rotation_to_axis_angle(delta.rotation());
    delta.translation().norm() + angle
}

/// Robust Procrustes: alternates the weighted SVD solve with Tukey biweight
/// reweighting of the residuals (scale 1.4826·MAD, cutoff 4.685·σ̂) until the
/// pose change drops below `tol`. Outliers end up with near-zero weight.
pub fn procrustes_irls(
    c: &CorrespondenceSet,
    max_outer_iterations: usize,
    tol: f64,
) -> Result<RegistrationResult> {
    if c.len() < 4 {
        return Err(Error::InvalidParameter(format!(
            "IRLS needs at least 4 correspondences, got {}",
            c.len()
        )));
    }
    if max_outer_iterations < 1 {
        return Err(Error::InvalidParameter("max outer iterations must be >= 1".into()));
    }

    let unweighted = procrustes_svd(&CorrespondenceSet::new(c.world.clone(), c.camera.clone())?)?;
    let mut pose = unweighted.pose;
    let mut iterations = 1;

    for _ in 1..max_outer_iterations {
        let (residuals, _) = residuals_for(&pose, &c.world, &c.camera);
        let med = median(&mut residuals.clone());
        let mad = median(&mut residuals.iter().map(|r| (r - med).abs()).collect::<Vec<_>>());
        if mad < 1e-14 {
            if med < 1e-9 {
                // exact data: already converged
                break;
            }
            // pathological ties: no usable scale estimate
            return Ok(RegistrationResult { irls_fallback: true, ..unweighted.clone() });
        }
        // Residual norms are nonnegative and cluster around their median even
        // for pure inliers, so the biweight is applied to the excess over the
        // median: the lower half keeps full weight, the upper tail rolls off
        // and hits zero at med + 4.685·σ̂.
        let cutoff = TUKEY_C * MAD_SCALE * mad;
        let weights: Vec<f64> = residuals
            .iter()
            .map(|&r| {
                let excess = r - med;
                if excess <= 0.0 {
                    1.0
                } else if excess < cutoff {
                    let u = excess / cutoff;
                    (1.0 - u * u).powi(2)
                } else {
                    0.0
                }
            })
            .collect();
        if weights.iter().sum::<f64>() <= 0.0 {
            return Ok(RegistrationResult { irls_fallback: true, ..unweighted.clone() });
        }
        let next = match solve_weighted(&c.world, &c.camera, Some(&weights)) {
            Ok(p) => p,
            Err(Error::DegenerateGeometry(_)) => {
                return Ok(RegistrationResult { irls_fallback: true, ..unweighted.clone() });
            }
            Err(e) => return Err(e),
        };
        iterations += 1;
        let change = pose_change(&pose, &next);
        pose = next;
        if change < tol {
            break;
        }
    }

    let (residuals, rms) = residuals_for(&pose, &c.world, &c.camera);
    Ok(RegistrationResult { pose, rms, residuals, iterations, irls_fallback: false })
}

/// ICP configuration. The correspondence gate rejects pairs farther than
/// `gate_factor` times the running RMS (off during the first iteration).
#[derive(Clone, Copy, Debug)]
pub struct IcpConfig {
    pub max_iterations: usize,
    pub tol: f64,
    pub gate_factor: Option<f64>,
}

impl Default for IcpConfig {
    fn default() -> Self {
        Self { max_iterations: 50, tol: 1e-8, gate_factor: Some(3.0) }
    }
}

/// ICP outcome: the refined pose plus the per-iteration RMS sequence, which
/// is non-increasing by construction.
#[derive(Clone, Debug)]
pub struct IcpResult {
    pub result: RegistrationResult,
    pub rms_history: Vec<f64>,
}

/// Point-to-point ICP: alternates nearest-neighbor correspondence against a
/// kd-tree over the scene cloud with the closed-form Procrustes solve. Stops
/// when the RMS improvement falls below `tol`; a step that would increase the
/// RMS is rejected and iteration ends.
pub fn icp_refine(
    model: &PointCloud,
    scene: &PointCloud,
    init: &Pose,
    cfg: &IcpConfig,
) -> Result<IcpResult> {
    if cfg.max_iterations < 1 {
        return Err(Error::InvalidParameter("max iterations must be >= 1".into()));
    }
    let tree = KdTree::build(scene.points());
    let mut pose = *init;
    let mut rms_history: Vec<f64> = Vec::new();
    let mut iterations = 0;
    let mut last_residuals: Vec<f64> = Vec::new();

    for iter in 0..cfg.max_iterations {
        let transformed: Vec<Vec3> = model.points().par_iter().map(|p| pose.transform(p)).collect();
        let matches: Vec<(Vec3, Vec3, f64)> = transformed
            .par_iter()
            .zip(model.points().par_iter())
            .filter_map(|(t, m)| {
                let (idx, dist) = tree.nearest(t)?;
                Some((*m, scene.points()[idx], dist))
            })
            .collect();

        let gated: Vec<&(Vec3, Vec3, f64)> = match (cfg.gate_factor, rms_history.last()) {
            (Some(g), Some(&rms)) if iter > 0 && rms > 0.0 => {
                matches.iter().filter(|(_, _, d)| *d <= g * rms).collect()
            }
            _ => matches.iter().collect(),
        };
        if gated.len() < 3 {
            return Err(Error::EmptyCorrespondences);
        }

        let world: Vec<Vec3> = gated.iter().map(|m| m.0).collect();
        let camera: Vec<Vec3> = gated.iter().map(|m| m.1).collect();
        let candidate = solve_weighted(&world, &camera, None)?;
        let (residuals, rms) = residuals_for(&candidate, &world, &camera);

        if let Some(&prev) = rms_history.last() {
            if rms > prev {
                break;
            }
        }
        pose = candidate;
        iterations += 1;
        last_residuals = residuals;
        let improvement = rms_history.last().map_or(f64::INFINITY, |&prev| prev - rms);
        rms_history.push(rms);
        if improvement < cfg.tol {
            break;
        }
    }

    let rms = rms_history.last().copied().unwrap_or(f64::INFINITY);
    Ok(IcpResult {
        result: RegistrationResult {
            pose,
            rms,
            residuals: last_residuals,
            iterations,
            irls_fallback: false,
        },
        rms_history,
    })
}
