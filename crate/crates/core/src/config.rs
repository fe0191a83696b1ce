//! JSON-facing configuration schemas. Files speak millimeters/degrees where
//! that is the natural reporting unit; everything is converted to meters and
//! radians when materialized into runtime types.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Pose, Vec3};
use crate::keypoints::{diameter, farthest_point_sample, KeypointSet, PointCloud};
use crate::models;
use crate::pipeline::EstimateConfig;
use crate::servoing::ServoConfig;
use crate::votes::{PatchGrid, SyntheticScene};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Unit {
    M,
    Mm,
}

impl Unit {
    /// Factor converting file coordinates to meters.
    pub fn to_meters(self) -> f64 {
        match self {
            Unit::M => 1.0,
            Unit::Mm => 1e-3,
        }
    }
}

/// A pose written the way the reports speak: translation in mm, rotation as
/// axis + angle in degrees.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct PoseSpec {
    pub translation_mm: [f64; 3],
    pub axis: [f64; 3],
    pub angle_deg: f64,
}

impl PoseSpec {
    pub fn to_pose(&self) -> Result<Pose> {
        let axis = Vec3::new(self.axis[0], self.axis[1], self.axis[2]);
        let n = axis.norm();
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::InvalidParameter("pose axis must be a nonzero vector".into()));
        }
        let t = Vec3::new(self.translation_mm[0], self.translation_mm[1], self.translation_mm[2]) * 1e-3;
        Pose::from_axis_angle(&(axis / n), self.angle_deg.to_radians(), t)
    }

    pub fn from_pose(pose: &Pose) -> Self {
        let (axis, angle) = crate::geometry::rotation_to_axis_angle(pose.rotation());
        let t = pose.translation() * 1e3;
        PoseSpec {
            translation_mm: [t.x, t.y, t.z],
            axis: [axis.x, axis.y, axis.z],
            angle_deg: angle.to_degrees(),
        }
    }
}

/// Where the object model comes from: a procedural generator or a PLY file.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum ModelSource {
    Builtin {
        name: String,
        #[serde(default = "default_model_points")]
        points: usize,
        #[serde(default = "default_model_diameter_mm")]
        diameter_mm: f64,
    },
    Ply {
        path: PathBuf,
        unit: Unit,
    },
}

fn default_model_points() -> usize {
    1000
}

fn default_model_diameter_mm() -> f64 {
    250.0
}

impl ModelSource {
    pub fn load(&self, base_dir: &Path) -> Result<PointCloud> {
        match self {
            ModelSource::Builtin { name, points, diameter_mm } => {
                models::by_name(name, *points, diameter_mm * 1e-3).ok_or_else(|| {
                    Error::InvalidParameter(format!(
                        "unknown builtin model {name:?}; available: cube_with_bumps, l_shape, symmetric_plate"
                    ))
                })
            }
            ModelSource::Ply { path, unit } => {
                let resolved = if path.is_absolute() { path.clone() } else { base_dir.join(path) };
                PointCloud::from_ply(&resolved, unit.to_meters())
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ImageSpec {
    pub width: u32,
    pub height: u32,
    pub patch: u32,
    pub stride: u32,
}

impl Default for ImageSpec {
    fn default() -> Self {
        // VGA frame, 64-px patches, dense stride of 4
        ImageSpec { width: 640, height: 480, patch: 64, stride: 4 }
    }
}

impl ImageSpec {
    pub fn grid(&self) -> Result<PatchGrid> {
        PatchGrid::new(self.width, self.height, self.patch, self.patch, self.stride)
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct IntrinsicsSpec {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Default for IntrinsicsSpec {
    fn default() -> Self {
        IntrinsicsSpec { fx: 500.0, fy: 500.0, cx: 320.0, cy: 240.0 }
    }
}

impl IntrinsicsSpec {
    pub fn build(&self) -> Result<CameraIntrinsics> {
        CameraIntrinsics::new(self.fx, self.fy, self.cx, self.cy)
    }
}

/// A synthetic scene description: model, keypoints, camera, ground-truth
/// pose, and the calibrated noise knobs of the simulated predictor.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SceneSpec {
    pub model: ModelSource,
    #[serde(default = "default_keypoint_count")]
    pub keypoint_count: usize,
    #[serde(default)]
    pub keypoint_seed_index: usize,
    /// Ground-truth object pose. Benchmarks leave this unset and draw a
    /// random pose per trial instead.
    #[serde(default)]
    pub pose: Option<PoseSpec>,
    #[serde(default)]
    pub image: ImageSpec,
    #[serde(default)]
    pub intrinsics: IntrinsicsSpec,
    #[serde(default = "default_vote_sigma_mm")]
    pub vote_sigma_mm: f64,
    #[serde(default = "default_outlier_fraction")]
    pub outlier_fraction: f64,
    #[serde(default = "default_outlier_radius_mm")]
    pub outlier_radius_mm: f64,
    #[serde(default = "default_tpr")]
    pub tpr: f64,
    #[serde(default = "default_tnr")]
    pub tnr: f64,
    #[serde(default = "default_depth_sigma_mm")]
    pub depth_sigma_mm: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_keypoint_count() -> usize {
    9
}

fn default_vote_sigma_mm() -> f64 {
    // mean keypoint regression error reported for the learned predictor
    11.8
}

fn default_outlier_fraction() -> f64 {
    0.1
}

fn default_outlier_radius_mm() -> f64 {
    500.0
}

fn default_tpr() -> f64 {
    // mean classifier true-positive rate of the learned predictor
    0.931
}

fn default_tnr() -> f64 {
    0.997
}

fn default_depth_sigma_mm() -> f64 {
    2.0
}

/// A fully materialized scene: runtime structs plus the pieces callers need
/// for evaluation.
pub struct BuiltScene {
    pub scene: SyntheticScene,
    pub model: PointCloud,
    pub keypoints: KeypointSet,
    pub gt_pose: Pose,
    pub diameter: f64,
}

impl SceneSpec {
    /// Materializes the spec. `pose_override` replaces the `pose` field (used
    /// by benchmark trials); exactly one of the two must be present.
    pub fn build(&self, base_dir: &Path, pose_override: Option<Pose>) -> Result<BuiltScene> {
        let model = self.model.load(base_dir)?;
        let keypoints =
            farthest_point_sample(&model, self.keypoint_count, self.keypoint_seed_index)?.keypoints;
        let gt_pose = match (pose_override, &self.pose) {
            (Some(p), _) => p,
            (None, Some(spec)) => spec.to_pose()?,
            (None, None) => {
                return Err(Error::InvalidParameter(
                    "scene spec has no ground-truth pose and none was supplied".into(),
                ))
            }
        };
        let d = diameter(&model)?;
        let scene = SyntheticScene {
            gt_pose,
            model: model.clone(),
            keypoints: keypoints.clone(),
            intrinsics: self.intrinsics.build()?,
            grid: self.image.grid()?,
            vote_sigma: self.vote_sigma_mm * 1e-3,
            outlier_fraction: self.outlier_fraction,
            outlier_radius: self.outlier_radius_mm * 1e-3,
            tpr: self.tpr,
            tnr: self.tnr,
            depth_sigma: self.depth_sigma_mm * 1e-3,
            seed: self.seed,
        };
        scene.validate()?;
        Ok(BuiltScene { scene, model, keypoints, gt_pose, diameter: d })
    }
}

/// Servo scenario file: start/goal object poses plus the loop parameters.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ServoScenario {
    pub initial: PoseSpec,
    pub desired: PoseSpec,
    #[serde(default)]
    pub servo: ServoConfig,
}

/// Estimation run description for the `estimate` subcommand.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EstimateSpec {
    /// Scene that produces (or accompanies) the votes.
    pub scene: SceneSpec,
    /// Optional precomputed votes; when absent the synthetic predictor runs.
    #[serde(default)]
    pub votes_csv: Option<PathBuf>,
    /// Optional keypoints file overriding FPS selection on the model.
    #[serde(default)]
    pub keypoints_json: Option<PathBuf>,
    #[serde(default)]
    pub estimate: EstimateConfig,
    #[serde(default = "default_metric")]
    pub metric: crate::evaluation::PoseMetric,
}

fn default_metric() -> crate::evaluation::PoseMetric {
    crate::evaluation::PoseMetric::Adds
}

pub fn load_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}
