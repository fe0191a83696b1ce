//! Seeded Monte-Carlo benchmark harness: repeated synthetic trials with
//! randomized ground-truth poses, per-trial metric rows, aggregate summaries,
//! and one-axis parameter sweeps (stride, noise, outliers, patch count).

use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::SceneSpec;
use crate::error::Result;
use crate::evaluation::{add_metric, adds_metric, pose_correct, regression_error_stats, PoseMetric};
use crate::geometry::{Pose, Vec3};
use crate::keypoints::PointCloud;
use crate::pipeline::{estimate_pose, EstimateConfig, IcpContext};
use crate::plot::{line_chart, Series};
use crate::votes::synth_votes;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BenchmarkTemplate {
    pub scene: SceneSpec,
    #[serde(default)]
    pub estimate: EstimateConfig,
    #[serde(default = "default_metric")]
    pub metric: PoseMetric,
    /// Camera-frame depth of the object center (mm); per-trial translation is
    /// this plus uniform jitter on all three axes.
    #[serde(default = "default_base_z_mm")]
    pub base_z_mm: f64,
    #[serde(default = "default_jitter_mm")]
    pub translation_jitter_mm: f64,
    #[serde(default = "default_max_rotation_deg")]
    pub max_rotation_deg: f64,
    /// Per-point Gaussian noise on the ICP scene cloud (mm), standing in for
    /// depth-map noise.
    #[serde(default = "default_scene_noise_mm")]
    pub scene_noise_mm: f64,
    /// Keep only the first n surviving patches (voting ablation); None = all.
    #[serde(default)]
    pub patch_keep: Option<usize>,
}

fn default_metric() -> PoseMetric {
    PoseMetric::Adds
}

fn default_base_z_mm() -> f64 {
    800.0
}

fn default_jitter_mm() -> f64 {
    40.0
}

fn default_max_rotation_deg() -> f64 {
    60.0
}

fn default_scene_noise_mm() -> f64 {
    2.0
}

#[derive(Clone, Debug, Serialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    pub add_mm: f64,
    pub adds_mm: f64,
    pub correct: bool,
    pub reg_mean_mm: f64,
    pub reg_std_mm: f64,
    pub t_synth_ms: f64,
    pub t_agg_ms: f64,
    pub t_reg_ms: f64,
    pub t_icp_ms: f64,
    pub realized_tpr: f64,
    pub realized_tnr: f64,
    /// Populated when the trial's pipeline failed; metrics are NaN then.
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchmarkSummary {
    pub trials: usize,
    pub failed_trials: usize,
    /// Percent of all trials whose chosen metric beat 0.1·D.
    pub pass_rate: f64,
    pub mean_add_mm: f64,
    pub mean_adds_mm: f64,
    pub mean_reg_mm: f64,
    pub std_reg_mm: f64,
    pub realized_tpr: f64,
    pub realized_tnr: f64,
    pub mean_t_synth_ms: f64,
    pub mean_t_agg_ms: f64,
    pub mean_t_reg_ms: f64,
    pub mean_t_icp_ms: f64,
    pub mean_t_total_ms: f64,
}

pub struct BenchmarkRun {
    pub records: Vec<TrialRecord>,
    pub summary: BenchmarkSummary,
}

/// SplitMix64-style stream derivation so every trial owns an independent,
/// thread-count-independent seed.
pub fn trial_seed(master_seed: u64, trial: usize) -> u64 {
    let mut z = master_seed ^ (trial as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Draws the trial's ground-truth pose: uniform random rotation axis, angle
/// uniform in [0, max], translation centered on (0, 0, base_z).
fn random_pose(template: &BenchmarkTemplate, rng: &mut ChaCha8Rng) -> Pose {
    let axis = loop {
        let a = Vec3::new(
            rng.gen_range(-1.0_f64..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let n = a.norm();
        if n > 1e-3 && n <= 1.0 {
            break a / n;
        }
    };
    let angle = rng.gen_range(0.0..template.max_rotation_deg.max(1e-9).to_radians());
    let j = template.translation_jitter_mm * 1e-3;
    let t = Vec3::new(
        rng.gen_range(-j..=j),
        rng.gen_range(-j..=j),
        template.base_z_mm * 1e-3 + rng.gen_range(-j..=j),
    );
    Pose::from_axis_angle(&axis, angle, t).expect("unit axis gives a valid rotation")
}

/// Scene cloud for ICP: the ground-truth-transformed model plus isotropic
/// Gaussian noise, a stand-in for a segmented depth-map cloud.
fn scene_cloud(model: &PointCloud, gt: &Pose, sigma: f64, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5CE9_E00D);
    let normal = Normal::new(0.0, sigma.max(f64::MIN_POSITIVE)).unwrap();
    PointCloud::new(
        model
            .points()
            .iter()
            .map(|p| {
                gt.transform(p)
                    + Vec3::new(
                        normal.sample(&mut rng),
                        normal.sample(&mut rng),
                        normal.sample(&mut rng),
                    )
            })
            .collect(),
    )
    .expect("model cloud is non-empty")
}

fn failed_record(trial: usize, seed: u64, message: String) -> TrialRecord {
    TrialRecord {
        trial,
        seed,
        add_mm: f64::NAN,
        adds_mm: f64::NAN,
        correct: false,
        reg_mean_mm: f64::NAN,
        reg_std_mm: f64::NAN,
        t_synth_ms: f64::NAN,
        t_agg_ms: f64::NAN,
        t_reg_ms: f64::NAN,
        t_icp_ms: f64::NAN,
        realized_tpr: f64::NAN,
        realized_tnr: f64::NAN,
        error: Some(message),
    }
}

fn run_trial(template: &BenchmarkTemplate, base_dir: &Path, trial: usize, seed: u64) -> TrialRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gt = random_pose(template, &mut rng);

    let mut spec = template.scene.clone();
    spec.seed = seed;
    let built = match spec.build(base_dir, Some(gt)) {
        Ok(b) => b,
        Err(e) => return failed_record(trial, seed, e.to_string()),
    };

    let t0 = Instant::now();
    let synth = synth_votes(&built.scene);
    let t_synth_ms = t0.elapsed().as_secs_f64() * 1e3;
    let (votes, stats) = match synth {
        Ok(v) => v,
        Err(e) => return failed_record(trial, seed, e.to_string()),
    };
    let votes = match template.patch_keep {
        Some(n) => match votes.truncate_patches(n.min(votes.patch_count())) {
            Ok(v) => v,
            Err(e) => return failed_record(trial, seed, e.to_string()),
        },
        None => votes,
    };

    let scene_pc;
    let icp_ctx = if template.estimate.mode.uses_icp() {
        scene_pc = scene_cloud(&built.model, &gt, template.scene_noise_mm * 1e-3, seed);
        Some(IcpContext { model: &built.model, scene: &scene_pc })
    } else {
        None
    };

    let report = match estimate_pose(&votes, &built.keypoints, &template.estimate, icp_ctx) {
        Ok(r) => r,
        Err(e) => return failed_record(trial, seed, e.to_string()),
    };

    let add = add_metric(&built.model, &report.pose, &gt);
    let adds = adds_metric(&built.model, &report.pose, &gt);
    let chosen = match template.metric {
        PoseMetric::Add => add,
        PoseMetric::Adds => adds,
    };
    let reg = regression_error_stats(report.aggregated.estimates(), &gt, &built.keypoints);

    TrialRecord {
        trial,
        seed,
        add_mm: add * 1e3,
        adds_mm: adds * 1e3,
        correct: pose_correct(chosen, built.diameter),
        reg_mean_mm: reg.mean * 1e3,
        reg_std_mm: reg.std * 1e3,
        t_synth_ms,
        t_agg_ms: report.timings.aggregate_ms,
        t_reg_ms: report.timings.register_ms,
        t_icp_ms: report.timings.icp_ms,
        realized_tpr: stats.realized_tpr(),
        realized_tnr: stats.realized_tnr(),
        error: None,
    }
}

pub fn run_benchmark(
    template: &BenchmarkTemplate,
    trials: usize,
    master_seed: u64,
    base_dir: &Path,
) -> Result<BenchmarkRun> {
    if trials == 0 {
        return Err(crate::error::Error::InvalidParameter("benchmark needs at least 1 trial".into()));
    }
    template.estimate.validate()?;

    let records: Vec<TrialRecord> = (0..trials)
        .into_par_iter()
        .map(|i| run_trial(template, base_dir, i, trial_seed(master_seed, i)))
        .collect();

    let ok: Vec<&TrialRecord> = records.iter().filter(|r| r.error.is_none()).collect();
    let mean = |f: &dyn Fn(&TrialRecord) -> f64| -> f64 {
        if ok.is_empty() {
            f64::NAN
        } else {
            ok.iter().map(|r| f(r)).sum::<f64>() / ok.len() as f64
        }
    };
    let summary = BenchmarkSummary {
        trials,
        failed_trials: records.len() - ok.len(),
        pass_rate: 100.0 * records.iter().filter(|r| r.correct).count() as f64 / trials as f64,
        mean_add_mm: mean(&|r| r.add_mm),
        mean_adds_mm: mean(&|r| r.adds_mm),
        mean_reg_mm: mean(&|r| r.reg_mean_mm),
        std_reg_mm: mean(&|r| r.reg_std_mm),
        realized_tpr: mean(&|r| r.realized_tpr),
        realized_tnr: mean(&|r| r.realized_tnr),
        mean_t_synth_ms: mean(&|r| r.t_synth_ms),
        mean_t_agg_ms: mean(&|r| r.t_agg_ms),
        mean_t_reg_ms: mean(&|r| r.t_reg_ms),
        mean_t_icp_ms: mean(&|r| r.t_icp_ms),
        mean_t_total_ms: mean(&|r| r.t_synth_ms + r.t_agg_ms + r.t_reg_ms + r.t_icp_ms),
    };
    Ok(BenchmarkRun { records, summary })
}

/// Per-trial CSV. Metric columns use shortest-round-trip formatting so reruns
/// are byte-identical; timing columns are wall-clock and inherently vary.
pub fn write_trial_csv(records: &[TrialRecord], path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        out,
        "trial,seed,add_mm,adds_mm,correct,reg_mean_mm,reg_std_mm,t_synth_ms,t_agg_ms,t_reg_ms,t_icp_ms"
    )?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{:.3},{:.3},{:.3},{:.3}",
            r.trial,
            r.seed,
            r.add_mm,
            r.adds_mm,
            r.correct as u8,
            r.reg_mean_mm,
            r.reg_std_mm,
            r.t_synth_ms,
            r.t_agg_ms,
            r.t_reg_ms,
            r.t_icp_ms
        )?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    None,
    Stride,
    Sigma,
    Outliers,
    Patchcount,
}

impl SweepAxis {
    pub fn values(self) -> Vec<f64> {
        match self {
            SweepAxis::None => vec![0.0],
            SweepAxis::Stride => vec![4.0, 8.0, 12.0, 16.0, 20.0, 24.0],
            SweepAxis::Sigma => vec![5.0, 10.0, 15.0, 20.0, 30.0],
            SweepAxis::Outliers => vec![0.0, 0.1, 0.2, 0.3, 0.4],
            SweepAxis::Patchcount => vec![1.0, 2.0, 5.0, 10.0, 25.0, 50.0],
        }
    }

    pub fn apply(self, template: &BenchmarkTemplate, value: f64) -> BenchmarkTemplate {
        let mut t = template.clone();
        match self {
            SweepAxis::None => {}
            SweepAxis::Stride => t.scene.image.stride = value as u32,
            SweepAxis::Sigma => t.scene.vote_sigma_mm = value,
            SweepAxis::Outliers => t.scene.outlier_fraction = value,
            SweepAxis::Patchcount => t.patch_keep = Some(value as usize),
        }
        t
    }

    pub fn label(self) -> &'static str {
        match self {
            SweepAxis::None => "run",
            SweepAxis::Stride => "stride (px)",
            SweepAxis::Sigma => "vote sigma (mm)",
            SweepAxis::Outliers => "outlier fraction",
            SweepAxis::Patchcount => "patches kept",
        }
    }
}

pub struct SweepPoint {
    pub value: f64,
    pub summary: BenchmarkSummary,
}

/// Runs the benchmark once per axis value, same trial count and master seed
/// each time, holding everything else fixed.
pub fn run_sweep(
    template: &BenchmarkTemplate,
    axis: SweepAxis,
    trials: usize,
    master_seed: u64,
    base_dir: &Path,
) -> Result<Vec<SweepPoint>> {
    let mut points = Vec::new();
    for value in axis.values() {
        let t = axis.apply(template, value);
        let run = run_benchmark(&t, trials, master_seed, base_dir)?;
        points.push(SweepPoint { value, summary: run.summary });
    }
    Ok(points)
}

pub fn write_sweep_csv(points: &[SweepPoint], path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "value,pass_rate,mean_add_mm,mean_adds_mm,mean_reg_mm,mean_t_total_ms")?;
    for p in points {
        writeln!(
            out,
            "{},{},{},{},{},{:.3}",
            p.value,
            p.summary.pass_rate,
            p.summary.mean_add_mm,
            p.summary.mean_adds_mm,
            p.summary.mean_reg_mm,
            p.summary.mean_t_total_ms
        )?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_sweep_svg(points: &[SweepPoint], axis: SweepAxis, path: &Path) -> Result<()> {
    let acc: Vec<(f64, f64)> = points.iter().map(|p| (p.value, p.summary.pass_rate)).collect();
    let time: Vec<(f64, f64)> =
        points.iter().map(|p| (p.value, p.summary.mean_t_total_ms)).collect();
    let svg = line_chart(
        "accuracy / time trade-off",
        axis.label(),
        "pass rate (%) / time (ms)",
        &[Series::new("pass rate (%)", acc), Series::new("mean time (ms)", time)],
    );
    std::fs::write(path, svg)?;
    Ok(())
}
