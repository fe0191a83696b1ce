//! Single-shot pose estimation: aggregate votes per keypoint, optionally keep
//! only the tightest clusters, solve the 3D-3D alignment, optionally polish
//! with ICP against a scene cloud.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::aggregation::{aggregate, select_low_variance_clusters, AggregatedKeypoints, MeanShiftConfig};
use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::keypoints::{KeypointSet, PointCloud};
use crate::registration::{
    icp_refine, procrustes_irls, procrustes_svd, CorrespondenceSet, IcpConfig, RegistrationResult,
};
use crate::votes::VoteSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RegistrationMode {
    #[serde(rename = "svd")]
    Svd,
    #[serde(rename = "irls")]
    Irls,
    #[serde(rename = "irls+icp")]
    IrlsIcp,
}

impl RegistrationMode {
    pub fn uses_icp(self) -> bool {
        self == RegistrationMode::IrlsIcp
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimateConfig {
    pub mean_shift: MeanShiftConfig,
    pub mode: RegistrationMode,
    /// Keep only the `k` lowest-variance clusters before registration.
    pub cluster_k: Option<usize>,
    pub irls_max_iterations: usize,
    pub irls_tol: f64,
    pub icp_max_iterations: usize,
    pub icp_tol: f64,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        EstimateConfig {
            mean_shift: MeanShiftConfig::default(),
            mode: RegistrationMode::Irls,
            cluster_k: None,
            irls_max_iterations: 20,
            irls_tol: 1e-9,
            icp_max_iterations: 50,
            icp_tol: 1e-8,
        }
    }
}

impl EstimateConfig {
    pub fn validate(&self) -> Result<()> {
        self.mean_shift.validate()?;
        if self.irls_max_iterations == 0 || self.icp_max_iterations == 0 {
            return Err(Error::InvalidParameter("iteration limits must be >= 1".into()));
        }
        if let Some(k) = self.cluster_k {
            if k < 3 {
                return Err(Error::InvalidParameter(format!(
                    "cluster selection needs k >= 3 to constrain a pose, got {k}"
                )));
            }
        }
        Ok(())
    }

    pub fn icp_config(&self) -> IcpConfig {
        IcpConfig { max_iterations: self.icp_max_iterations, tol: self.icp_tol, ..IcpConfig::default() }
    }
}

/// Model and scene clouds required when the mode ends in ICP.
#[derive(Clone, Copy)]
pub struct IcpContext<'a> {
    pub model: &'a PointCloud,
    pub scene: &'a PointCloud,
}

#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct StageTimings {
    pub aggregate_ms: f64,
    pub register_ms: f64,
    pub icp_ms: f64,
}

#[derive(Clone, Debug)]
pub struct EstimateReport {
    pub pose: Pose,
    pub aggregated: AggregatedKeypoints,
    /// Indices of clusters kept by low-variance selection, ascending.
    pub selected: Option<Vec<usize>>,
    pub registration: RegistrationResult,
    pub icp_rms_history: Option<Vec<f64>>,
    pub timings: StageTimings,
}

/// Runs aggregate → (optional cluster selection) → Procrustes/IRLS →
/// (optional ICP). `icp` must be provided iff the mode asks for ICP.
pub fn estimate_pose(
    votes: &VoteSet,
    keypoints: &KeypointSet,
    cfg: &EstimateConfig,
    icp: Option<IcpContext<'_>>,
) -> Result<EstimateReport> {
    cfg.validate()?;
    if votes.keypoint_count() != keypoints.len() {
        return Err(Error::InvalidParameter(format!(
            "vote set carries {} clusters but the keypoint set has {} points",
            votes.keypoint_count(),
            keypoints.len()
        )));
    }
    if cfg.mode.uses_icp() && icp.is_none() {
        return Err(Error::InvalidParameter(
            "registration mode irls+icp requires a scene cloud to refine against".into(),
        ));
    }

    let t0 = Instant::now();
    let aggregated = aggregate(votes, &cfg.mean_shift)?;
    let aggregate_ms = t0.elapsed().as_secs_f64() * 1e3;

    let t1 = Instant::now();
    let (world, camera, selected) = match cfg.cluster_k {
        Some(k) => {
            let keep = select_low_variance_clusters(&aggregated, k)?;
            let world: Vec<_> = keep.iter().map(|&j| keypoints.points()[j]).collect();
            let camera: Vec<_> = keep.iter().map(|&j| aggregated.estimates()[j]).collect();
            (world, camera, Some(keep))
        }
        None => (keypoints.points().to_vec(), aggregated.estimates().to_vec(), None),
    };
    let correspondences = CorrespondenceSet::new(world, camera)?;
    let registration = match cfg.mode {
        RegistrationMode::Svd => procrustes_svd(&correspondences)?,
        RegistrationMode::Irls | RegistrationMode::IrlsIcp => {
            procrustes_irls(&correspondences, cfg.irls_max_iterations, cfg.irls_tol)?
        }
    };
    let register_ms = t1.elapsed().as_secs_f64() * 1e3;

    let mut pose = registration.pose;
    let mut icp_rms_history = None;
    let mut icp_ms = 0.0;
    if cfg.mode.uses_icp() {
        let ctx = icp.expect("checked above");
        let t2 = Instant::now();
        let refined = icp_refine(ctx.model, ctx.scene, &pose, &cfg.icp_config())?;
        icp_ms = t2.elapsed().as_secs_f64() * 1e3;
        pose = refined.result.pose;
        icp_rms_history = Some(refined.rms_history);
    }

    Ok(EstimateReport {
        pose,
        aggregated,
        selected,
        registration,
        icp_rms_history,
        timings: StageTimings { aggregate_ms, register_ms, icp_ms },
    })
}
