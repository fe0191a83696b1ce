//! Command-line surface: keypoint selection, synthetic vote generation,
//! single-shot estimation, Monte-Carlo benchmarks, and servo simulation.
//!
//! Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 degenerate
//! geometry, 5 servo divergence.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};

use posekit::benchmark::{
    run_benchmark, run_sweep, write_sweep_csv, write_sweep_svg, write_trial_csv, BenchmarkTemplate,
    SweepAxis,
};
use posekit::config::{load_json, EstimateSpec, ModelSource, SceneSpec, ServoScenario, Unit};
use posekit::error::Error;
use posekit::evaluation::{add_metric, adds_metric, pose_correct, PoseMetric};
use posekit::geometry::rotation_to_axis_angle;
use posekit::keypoints::{diameter, farthest_point_sample, KeypointSet, PointCloud};
use posekit::pipeline::{estimate_pose, IcpContext};
use posekit::servoing::{export_trajectory, make_estimator, run_servo};
use posekit::votes::{synth_votes, VoteSet};

const EXIT_CONFIG: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_DEGENERATE: u8 = 4;
const EXIT_DIVERGENCE: u8 = 5;

#[derive(Parser)]
#[command(name = "posekit", about = "Vote-based 6-DoF pose estimation toolkit", version)]
struct Cli {
    /// Master seed; overrides any seed found in config files.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (default: POSEKIT_THREADS env var, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum UnitArg {
    M,
    Mm,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SweepArg {
    None,
    Stride,
    Sigma,
    Outliers,
    Patchcount,
}

impl From<SweepArg> for SweepAxis {
    fn from(v: SweepArg) -> Self {
        match v {
            SweepArg::None => SweepAxis::None,
            SweepArg::Stride => SweepAxis::Stride,
            SweepArg::Sigma => SweepAxis::Sigma,
            SweepArg::Outliers => SweepAxis::Outliers,
            SweepArg::Patchcount => SweepAxis::Patchcount,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Select M farthest-point-sampled keypoints from a model and save them.
    Keypoints {
        /// ASCII PLY model file (mutually exclusive with --builtin).
        #[arg(long)]
        model: Option<PathBuf>,
        /// Coordinate unit of the PLY file.
        #[arg(long, value_enum, default_value_t = UnitArg::M)]
        unit: UnitArg,
        /// Procedural model name (cube_with_bumps | l_shape | symmetric_plate).
        #[arg(long)]
        builtin: Option<String>,
        /// Point count for a builtin model.
        #[arg(long, default_value_t = 1000)]
        points: usize,
        /// Diameter in mm for a builtin model.
        #[arg(long, default_value_t = 250.0)]
        diameter: f64,
        /// Number of keypoints.
        #[arg(short = 'm', long, default_value_t = 9)]
        count: usize,
        /// Index of the seed point for the greedy selection.
        #[arg(long, default_value_t = 0)]
        seed_index: usize,
        /// Output keypoints JSON.
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Generate synthetic votes for a scene and write them as CSV.
    Synth {
        /// Scene JSON (see docs/formats.md).
        scene: PathBuf,
        /// Output votes CSV.
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Estimate a pose from votes (file or synthetic) and print a JSON report.
    Estimate {
        /// Estimation spec JSON.
        config: PathBuf,
        /// Optional file to also write the JSON report to.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run seeded Monte-Carlo trials and write CSV/JSON/SVG reports.
    Benchmark {
        /// Benchmark template JSON.
        config: PathBuf,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        /// Sweep one axis, holding everything else fixed.
        #[arg(long, value_enum, default_value_t = SweepArg::None)]
        sweep: SweepArg,
        /// Output directory.
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Simulate the PBVS loop for a scenario and export the trajectory.
    Servo {
        /// Scenario JSON.
        scenario: PathBuf,
        /// Output trajectory CSV; SVG plots are written next to it.
        #[arg(short, long)]
        out: PathBuf,
        /// Skip the SVG plots.
        #[arg(long)]
        no_svg: bool,
    },
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::InvalidParameter(_)
        | Error::InvalidRotation(_)
        | Error::InvalidDepth(_)
        | Error::Parse { .. }
        | Error::Json(_) => EXIT_CONFIG,
        Error::Io(_) => EXIT_IO,
        Error::InvalidCloud
        | Error::NotEnoughPoints { .. }
        | Error::DegenerateKernel { .. }
        | Error::DegenerateGeometry(_)
        | Error::EmptyScene
        | Error::EmptyCorrespondences => EXIT_DEGENERATE,
        Error::Divergence { .. } => EXIT_DIVERGENCE,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();

    let threads = cli.threads.or_else(|| {
        std::env::var("POSEKIT_THREADS").ok().and_then(|v| v.parse().ok())
    });
    if let Some(n) = threads {
        if n == 0 {
            eprintln!("error: --threads must be >= 1");
            return ExitCode::from(EXIT_CONFIG);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: failed to size thread pool: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    }

    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn run(cli: Cli) -> posekit::Result<u8> {
    match cli.cmd {
        Cmd::Keypoints { model, unit, builtin, points, diameter: diameter_mm, count, seed_index, out } => {
            let cloud = match (model, builtin) {
                (Some(path), None) => {
                    let scale = match unit {
                        UnitArg::M => Unit::M.to_meters(),
                        UnitArg::Mm => Unit::Mm.to_meters(),
                    };
                    PointCloud::from_ply(&path, scale)?
                }
                (None, Some(name)) => {
                    ModelSource::Builtin { name, points, diameter_mm }.load(Path::new("."))?
                }
                _ => {
                    return Err(Error::InvalidParameter(
                        "exactly one of --model and --builtin is required".into(),
                    ))
                }
            };
            let selection = farthest_point_sample(&cloud, count, seed_index)?;
            selection.keypoints.save_json(&out)?;
            println!(
                "selected {} keypoints (covering radius {:.2} mm) -> {}",
                selection.keypoints.len(),
                selection.covering_radius() * 1e3,
                out.display()
            );
            Ok(0)
        }

        Cmd::Synth { scene, out } => {
            let mut spec: SceneSpec = load_json(&scene)?;
            if let Some(seed) = cli.seed {
                spec.seed = seed;
            }
            let base = scene.parent().unwrap_or(Path::new(".")).to_path_buf();
            let built = spec.build(&base, None)?;
            let (votes, stats) = synth_votes(&built.scene)?;
            votes.save_csv(&out)?;
            println!(
                "wrote {} patches x {} keypoints -> {} (realized TPR {:.3}, TNR {:.3})",
                votes.patch_count(),
                votes.keypoint_count(),
                out.display(),
                stats.realized_tpr(),
                stats.realized_tnr()
            );
            Ok(0)
        }

        Cmd::Estimate { config, report } => {
            let t0 = Instant::now();
            let mut spec: EstimateSpec = load_json(&config)?;
            if let Some(seed) = cli.seed {
                spec.scene.seed = seed;
            }
            let base = config.parent().unwrap_or(Path::new(".")).to_path_buf();
            let built = spec.scene.build(&base, None)?;

            let keypoints = match &spec.keypoints_json {
                Some(path) => KeypointSet::load_json(&base.join(path))?,
                None => built.keypoints.clone(),
            };
            let votes = match &spec.votes_csv {
                Some(path) => VoteSet::load_csv(&base.join(path))?,
                None => synth_votes(&built.scene)?.0,
            };

            let scene_cloud;
            let icp_ctx = if spec.estimate.mode.uses_icp() {
                scene_cloud = PointCloud::new(
                    built.model.points().iter().map(|p| built.gt_pose.transform(p)).collect(),
                )?;
                Some(IcpContext { model: &built.model, scene: &scene_cloud })
            } else {
                None
            };
            let result = estimate_pose(&votes, &keypoints, &spec.estimate, icp_ctx)?;

            let add = add_metric(&built.model, &result.pose, &built.gt_pose) * 1e3;
            let adds = adds_metric(&built.model, &result.pose, &built.gt_pose) * 1e3;
            let chosen = match spec.metric {
                PoseMetric::Add => add,
                PoseMetric::Adds => adds,
            };
            let d_mm = diameter(&built.model)? * 1e3;
            let (axis, angle) = rotation_to_axis_angle(result.pose.rotation());
            let rot = result.pose.rotation();
            let json = serde_json::json!({
                "pose": {
                    "translation_mm": [
                        result.pose.translation().x * 1e3,
                        result.pose.translation().y * 1e3,
                        result.pose.translation().z * 1e3
                    ],
                    "rotation_matrix": [
                        [rot[(0,0)], rot[(0,1)], rot[(0,2)]],
                        [rot[(1,0)], rot[(1,1)], rot[(1,2)]],
                        [rot[(2,0)], rot[(2,1)], rot[(2,2)]]
                    ],
                    "axis": [axis.x, axis.y, axis.z],
                    "angle_deg": angle.to_degrees(),
                },
                "metrics": {
                    "add_mm": add,
                    "adds_mm": adds,
                    "correct": pose_correct(chosen * 1e-3, d_mm * 1e-3),
                    "diameter_mm": d_mm,
                },
                "diagnostics": {
                    "patches": votes.patch_count(),
                    "registration_rms_mm": result.registration.rms * 1e3,
                    "registration_iterations": result.registration.iterations,
                    "irls_fallback": result.registration.irls_fallback,
                    "selected_clusters": result.selected,
                    "icp_rms_history_mm": result.icp_rms_history.as_ref().map(|h| {
                        h.iter().map(|r| r * 1e3).collect::<Vec<_>>()
                    }),
                    "cluster_variances_mm2": result.aggregated.diagnostics().iter()
                        .map(|d| d.variance * 1e6).collect::<Vec<_>>(),
                },
                "timings_ms": {
                    "aggregate": result.timings.aggregate_ms,
                    "register": result.timings.register_ms,
                    "icp": result.timings.icp_ms,
                    "total": t0.elapsed().as_secs_f64() * 1e3,
                },
            });
            let text = serde_json::to_string_pretty(&json)?;
            println!("{text}");
            if let Some(path) = report {
                std::fs::write(path, text)?;
            }
            Ok(0)
        }

        Cmd::Benchmark { config, trials, sweep, out } => {
            let mut template: BenchmarkTemplate = load_json(&config)?;
            if let Some(seed) = cli.seed {
                template.scene.seed = seed;
            }
            let master_seed = cli.seed.unwrap_or(template.scene.seed);
            let base = config.parent().unwrap_or(Path::new(".")).to_path_buf();
            std::fs::create_dir_all(&out)?;

            let axis = SweepAxis::from(sweep);
            if axis == SweepAxis::None {
                let run = run_benchmark(&template, trials, master_seed, &base)?;
                write_trial_csv(&run.records, &out.join("trials.csv"))?;
                std::fs::write(
                    out.join("summary.json"),
                    serde_json::to_string_pretty(&run.summary)?,
                )?;
                println!(
                    "{} trials: pass rate {:.1}% ({} failed), mean ADD-S {:.2} mm, mean total {:.1} ms",
                    run.summary.trials,
                    run.summary.pass_rate,
                    run.summary.failed_trials,
                    run.summary.mean_adds_mm,
                    run.summary.mean_t_total_ms
                );
            } else {
                let points = run_sweep(&template, axis, trials, master_seed, &base)?;
                write_sweep_csv(&points, &out.join("sweep.csv"))?;
                write_sweep_svg(&points, axis, &out.join("sweep.svg"))?;
                for p in &points {
                    println!(
                        "{} = {}: pass rate {:.1}%, mean total {:.1} ms",
                        axis.label(),
                        p.value,
                        p.summary.pass_rate,
                        p.summary.mean_t_total_ms
                    );
                }
            }
            Ok(0)
        }

        Cmd::Servo { scenario, out, no_svg } => {
            let mut scn: ServoScenario = load_json(&scenario)?;
            if let Some(seed) = cli.seed {
                scn.servo.seed = seed;
            }
            scn.servo.validate()?;
            let initial = scn.initial.to_pose()?;
            let desired = scn.desired.to_pose()?;
            let estimator = make_estimator(scn.servo.noise, scn.servo.seed);
            let svg_stem = if no_svg { None } else { Some(out.with_extension("")) };

            match run_servo(&initial, &desired, &scn.servo, estimator) {
                Ok(traj) => {
                    export_trajectory(&traj, &out, svg_stem.as_deref())?;
                    let e = traj.final_error();
                    println!(
                        "{} in {} steps; final error ({:.2}, {:.2}, {:.2}) mm -> {}",
                        if traj.converged { "converged" } else { "stopped at max steps" },
                        traj.steps(),
                        e[0] * 1e3,
                        e[1] * 1e3,
                        e[2] * 1e3,
                        out.display()
                    );
                    Ok(if traj.converged { 0 } else { EXIT_DIVERGENCE })
                }
                Err(Error::Divergence { trajectory }) => {
                    // still export what happened before failing
                    export_trajectory(&trajectory, &out, svg_stem.as_deref())?;
                    Err(Error::Divergence { trajectory })
                }
                Err(e) => Err(e),
            }
        }
    }
}
