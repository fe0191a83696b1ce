//! The predictor boundary: patch grids, keypoint votes, the synthetic
//! predictor that stands in for the CNNs, and the vote CSV interchange.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{backproject, CameraIntrinsics, Pose, Vec3};
use crate::keypoints::{KeypointSet, PointCloud};

/// Sliding-window patch layout over an image, centers row-major.
#[derive(Clone, Debug)]
pub struct PatchGrid {
    pub width: u32,
    pub height: u32,
    pub patch_h: u32,
    pub patch_w: u32,
    pub stride: u32,
    centers: Vec<(f64, f64)>,
    cols: usize,
    rows: usize,
}

impl PatchGrid {
    pub fn new(width: u32, height: u32, patch_h: u32, patch_w: u32, stride: u32) -> Result<Self> {
        if patch_h > height || patch_w > width {
            return Err(Error::InvalidParameter(format!(
                "patch {patch_w}x{patch_h} larger than image {width}x{height}"
            )));
        }
        if stride < 1 {
            return Err(Error::InvalidParameter("stride must be at least 1".into()));
        }
        let cols = ((width - patch_w) / stride + 1) as usize;
        let rows = ((height - patch_h) / stride + 1) as usize;
        let mut centers = Vec::with_capacity(cols * rows);
        for r in 0..rows {
            for c in 0..cols {
                let x0 = (c as u32 * stride) as f64;
                let y0 = (r as u32 * stride) as f64;
                centers.push((x0 + patch_w as f64 / 2.0, y0 + patch_h as f64 / 2.0));
            }
        }
        Ok(Self { width, height, patch_h, patch_w, stride, centers, cols, rows })
    }

    pub fn centers(&self) -> &[(f64, f64)] {
        &self.centers
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn rows(&self) -> usize {
        self.rows
    }
}

/// N x M predicted keypoint positions in the camera frame, grouped as M
/// clusters of N votes. Cluster j holds one vote per kept patch, in patch
/// order.
#[derive(Clone, Debug, PartialEq)]
pub struct VoteSet {
    keypoint_count: usize,
    patch_indices: Vec<usize>,
    clusters: Vec<Vec<Vec3>>,
}

impl VoteSet {
    /// Builds a vote set from per-patch vote rows; every patch must vote for
    /// the same number of keypoints.
    pub fn from_patch_votes(patch_indices: Vec<usize>, per_patch: Vec<Vec<Vec3>>) -> Result<Self> {
        if per_patch.is_empty() {
            return Err(Error::InvalidParameter("vote set needs at least one patch".into()));
        }
        if patch_indices.len() != per_patch.len() {
            return Err(Error::InvalidParameter(format!(
                "{} patch indices for {} vote rows",
                patch_indices.len(),
                per_patch.len()
            )));
        }
        let m = per_patch[0].len();
        if m == 0 {
            return Err(Error::InvalidParameter("patches must vote for at least one keypoint".into()));
        }
        let mut clusters = vec![Vec::with_capacity(per_patch.len()); m];
        for (i, row) in per_patch.iter().enumerate() {
            if row.len() != m {
                return Err(Error::InvalidParameter(format!(
                    "patch {} votes for {} keypoints, expected {m}",
                    patch_indices[i],
                    row.len()
                )));
            }
            for (j, v) in row.iter().enumerate() {
                if !v.iter().all(|c| c.is_finite()) {
                    return Err(Error::InvalidParameter(format!(
                        "non-finite vote for patch {} keypoint {j}",
                        patch_indices[i]
                    )));
                }
                clusters[j].push(*v);
            }
        }
        Ok(Self { keypoint_count: m, patch_indices, clusters })
    }

    pub fn keypoint_count(&self) -> usize {
        self.keypoint_count
    }

    pub fn patch_count(&self) -> usize {
        self.patch_indices.len()
    }

    pub fn patch_indices(&self) -> &[usize] {
        &self.patch_indices
    }

    /// Votes of cluster j, one per kept patch.
    pub fn cluster(&self, j: usize) -> &[Vec3] {
        &self.clusters[j]
    }

    /// Keeps only the first `n` patches (in patch-index order); used by the
    /// patch-count ablation.
    pub fn truncate_patches(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.patch_count() {
            return Err(Error::InvalidParameter(format!(
                "cannot keep {n} of {} patches",
                self.patch_count()
            )));
        }
        Ok(Self {
            keypoint_count: self.keypoint_count,
            patch_indices: self.patch_indices[..n].to_vec(),
            clusters: self.clusters.iter().map(|c| c[..n].to_vec()).collect(),
        })
    }

    /// Writes the vote CSV (`patch_index,keypoint_index,x,y,z`, meters).
    /// Floats use shortest round-trip formatting so save → load is exact.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "patch_index,keypoint_index,x,y,z")?;
        for (i, &patch) in self.patch_indices.iter().enumerate() {
            for j in 0..self.keypoint_count {
                let v = self.clusters[j][i];
                writeln!(out, "{patch},{j},{},{},{}", v.x, v.y, v.z)?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let reader = BufReader::new(std::fs::File::open(path)?);
        let mut lines = reader.lines().enumerate();

        let header = match lines.next() {
            Some((_, Ok(l))) => l,
            Some((_, Err(e))) => return Err(e.into()),
            None => return Err(Error::Parse { line: 1, message: "empty vote file".into() }),
        };
        if header.trim() != "patch_index,keypoint_index,x,y,z" {
            return Err(Error::Parse { line: 1, message: format!("bad header '{header}'") });
        }

        let mut patch_indices: Vec<usize> = Vec::new();
        let mut per_patch: Vec<Vec<Vec3>> = Vec::new();
        for (n, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse { line: n + 1, message };
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 5 {
                return Err(err(format!("expected 5 fields, got {}", fields.len())));
            }
            let patch: usize = fields[0].parse().map_err(|_| err("bad patch index".into()))?;
            let j: usize = fields[1].parse().map_err(|_| err("bad keypoint index".into()))?;
            let coord = |i: usize| -> Result<f64> {
                fields[i]
                    .parse::<f64>()
                    .map_err(|_| err(format!("bad coordinate '{}'", fields[i])))
            };
            let v = Vec3::new(coord(2)?, coord(3)?, coord(4)?);

            if patch_indices.last() != Some(&patch) {
                if patch_indices.contains(&patch) {
                    return Err(err(format!("patch {patch} rows are not contiguous")));
                }
                patch_indices.push(patch);
                per_patch.push(Vec::new());
            }
            let row = per_patch.last_mut().unwrap();
            if j != row.len() {
                return Err(err(format!("expected keypoint index {}, got {j}", row.len())));
            }
            row.push(v);
        }
        if per_patch.is_empty() {
            return Err(Error::Parse { line: 1, message: "vote file has no data rows".into() });
        }
        let m = per_patch[0].len();
        if let Some(bad) = per_patch.iter().position(|r| r.len() != m) {
            return Err(Error::Parse {
                line: 0,
                message: format!(
                    "patch {} has {} votes, expected {m}",
                    patch_indices[bad],
                    per_patch[bad].len()
                ),
            });
        }
        Self::from_patch_votes(patch_indices, per_patch)
    }
}

/// Offsets from a back-projected patch center to each transformed keypoint:
/// δ_j = T·X_j − C.
pub fn compute_offsets(pose: &Pose, center: &Vec3, keypoints: &KeypointSet) -> Vec<Vec3> {
    keypoints.points().iter().map(|x| pose.transform(x) - center).collect()
}

/// Rebuilds votes from predicted offsets by adding back the patch centers.
pub fn reconstruct_votes(centers: &[Vec3], offsets: &[Vec<Vec3>]) -> Result<VoteSet> {
    if centers.len() != offsets.len() {
        return Err(Error::InvalidParameter(format!(
            "{} centers but {} offset rows",
            centers.len(),
            offsets.len()
        )));
    }
    let per_patch = centers
        .iter()
        .zip(offsets)
        .map(|(c, row)| row.iter().map(|d| c + d).collect())
        .collect();
    VoteSet::from_patch_votes((0..centers.len()).collect(), per_patch)
}

/// Ground-truth scene used by the synthetic predictor: pose, model cloud,
/// camera, and the noise model calibrated from the classifier/regression
/// error statistics.
#[derive(Clone, Debug)]
pub struct SyntheticScene {
    pub gt_pose: Pose,
    pub model: PointCloud,
    pub keypoints: KeypointSet,
    pub intrinsics: CameraIntrinsics,
    pub grid: PatchGrid,
    /// isotropic vote noise, meters
    pub vote_sigma: f64,
    /// per-vote probability of replacement by a uniform ball draw
    pub outlier_fraction: f64,
    /// radius of the outlier ball around the patch center, meters
    pub outlier_radius: f64,
    /// simulated classifier rates
    pub tpr: f64,
    pub tnr: f64,
    /// depth-read noise at the patch center, meters
    pub depth_sigma: f64,
    pub seed: u64,
}

impl SyntheticScene {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.outlier_fraction) {
            return Err(Error::InvalidParameter(format!(
                "outlier fraction must be in [0, 1), got {}",
                self.outlier_fraction
            )));
        }
        for (name, v) in [("vote_sigma", self.vote_sigma), ("depth_sigma", self.depth_sigma), ("outlier_radius", self.outlier_radius)] {
            if v < 0.0 || !v.is_finite() {
                return Err(Error::InvalidParameter(format!("{name} must be >= 0, got {v}")));
            }
        }
        for (name, v) in [("tpr", self.tpr), ("tnr", self.tnr)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidParameter(format!("{name} must be in [0, 1], got {v}")));
            }
        }
        Ok(())
    }
}

/// Realized counts from one synthetic frame.
#[derive(Clone, Copy, Debug, Default, serde::Serialize)]
pub struct SynthStats {
    pub object_patches: usize,
    pub kept_object_patches: usize,
    pub background_patches: usize,
    pub injected_background_patches: usize,
}

impl SynthStats {
    pub fn realized_tpr(&self) -> f64 {
        if self.object_patches == 0 {
            return 0.0;
        }
        self.kept_object_patches as f64 / self.object_patches as f64
    }

    pub fn realized_tnr(&self) -> f64 {
        if self.background_patches == 0 {
            return 1.0;
        }
        1.0 - self.injected_background_patches as f64 / self.background_patches as f64
    }
}

fn patch_rng(seed: u64, patch_index: usize) -> ChaCha8Rng {
    // counter-based stream per patch so parallel and serial runs match
    ChaCha8Rng::seed_from_u64(seed ^ (patch_index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn uniform_in_ball(rng: &mut ChaCha8Rng, radius: f64) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        if v.norm_squared() <= 1.0 {
            return v * radius;
        }
    }
}

/// CNN stand-in. Projects the model under the ground-truth pose, labels each
/// grid patch object/background by whether a model point falls inside it,
/// runs the simulated classifier (TPR/TNR coin flips), and emits per-patch
/// votes: ground truth plus Gaussian noise, contaminated by uniform-ball
/// outliers. Deterministic given the scene seed, independent of thread count.
pub fn synth_votes(scene: &SyntheticScene) -> Result<(VoteSet, SynthStats)> {
    scene.validate()?;
    let grid = &scene.grid;

    // project model points once
    let projected: Vec<(f64, f64, f64)> = scene
        .model
        .points()
        .iter()
        .filter_map(|p| {
            let q = scene.gt_pose.transform(p);
            scene.intrinsics.project(&q).map(|(u, v)| (u, v, q.z))
        })
        .collect();

    // per-patch nearest projected point (pixel distance to patch center) via
    // the range of patches containing each projection
    let mut nearest: Vec<Option<(f64, f64)>> = vec![None; grid.len()]; // (pixel dist², depth)
    let (pw, ph, d) = (grid.patch_w as f64, grid.patch_h as f64, grid.stride as f64);
    for &(u, v, z) in &projected {
        if !(0.0..grid.width as f64).contains(&u) || !(0.0..grid.height as f64).contains(&v) {
            continue;
        }
        let c_lo = ((u - pw) / d).ceil().max(0.0) as usize;
        let c_hi = ((u / d).floor() as usize).min(grid.cols().saturating_sub(1));
        let r_lo = ((v - ph) / d).ceil().max(0.0) as usize;
        let r_hi = ((v / d).floor() as usize).min(grid.rows().saturating_sub(1));
        for r in r_lo..=r_hi {
            for c in c_lo..=c_hi {
                let k = r * grid.cols() + c;
                let (cu, cv) = grid.centers()[k];
                let dist2 = (u - cu).powi(2) + (v - cv).powi(2);
                match nearest[k] {
                    Some((best, _)) if best <= dist2 => {}
                    _ => nearest[k] = Some((dist2, z)),
                }
            }
        }
    }

    let object_depth = scene.gt_pose.translation().z.max(0.1);
    let m = scene.keypoints.len();

    let results: Vec<(usize, bool, Option<Vec<Vec3>>)> = (0..grid.len())
        .into_par_iter()
        .map(|k| {
            let mut rng = patch_rng(scene.seed, k);
            let is_object = nearest[k].is_some();
            let kept = if is_object {
                rng.gen_bool(scene.tpr)
            } else {
                rng.gen_bool(1.0 - scene.tnr)
            };
            if !kept {
                return (k, is_object, None);
            }
            let (cu, cv) = grid.centers()[k];
            let z = if let Some((_, depth)) = nearest[k] {
                let noise = if scene.depth_sigma > 0.0 {
                    Normal::new(0.0, scene.depth_sigma).unwrap().sample(&mut rng)
                } else {
                    0.0
                };
                depth + noise
            } else {
                // injected background patch: plausible but unrelated depth
                rng.gen_range(0.5 * object_depth..1.5 * object_depth)
            };
            let Ok(center) = backproject(cu, cv, z.max(1e-3), &scene.intrinsics) else {
                return (k, is_object, None);
            };
            let votes = if is_object {
                let normal = Normal::new(0.0, scene.vote_sigma.max(f64::MIN_POSITIVE)).unwrap();
                scene
                    .keypoints
                    .points()
                    .iter()
                    .map(|x| {
                        if scene.outlier_fraction > 0.0 && rng.gen_bool(scene.outlier_fraction) {
                            center + uniform_in_ball(&mut rng, scene.outlier_radius)
                        } else {
                            let noise = if scene.vote_sigma > 0.0 {
                                Vec3::new(
                                    normal.sample(&mut rng),
                                    normal.sample(&mut rng),
                                    normal.sample(&mut rng),
                                )
                            } else {
                                Vec3::zeros()
                            };
                            // offset = (T·X − C) + noise, vote = C + offset
                            scene.gt_pose.transform(x) + noise
                        }
                    })
                    .collect()
            } else {
                // a background patch regresses garbage: uniform in the
                // outlier ball around its center
                (0..m)
                    .map(|_| center + uniform_in_ball(&mut rng, scene.outlier_radius))
                    .collect()
            };
            (k, is_object, Some(votes))
        })
        .collect();

    let mut stats = SynthStats::default();
    let mut patch_indices = Vec::new();
    let mut per_patch = Vec::new();
    for (k, is_object, votes) in results {
        if is_object {
            stats.object_patches += 1;
        } else {
            stats.background_patches += 1;
        }
        if let Some(v) = votes {
            if is_object {
                stats.kept_object_patches += 1;
            } else {
                stats.injected_background_patches += 1;
            }
            patch_indices.push(k);
            per_patch.push(v);
        }
    }
    if stats.kept_object_patches == 0 {
        return Err(Error::EmptyScene);
    }
    let votes = VoteSet::from_patch_votes(patch_indices, per_patch)?;
    Ok((votes, stats))
}
