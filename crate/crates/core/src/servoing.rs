//! Position-based visual servoing simulation: close the loop around any pose
//! estimator, drive the camera with v = −λ(R·t; θu), and log the trajectory.
//!
//! Conventions: `T` is the object pose in the camera frame and the pose error
//! is ΔT = T_desired ∘ T⁻¹. The commanded velocity is expressed in the
//! current camera frame, so the error translation (which lives in the desired
//! frame) is rotated into it by ΔRᵀ before applying the gain. The camera's
//! world pose W = T⁻¹ is integrated as W ← W·exp(v·dt), a body-frame twist.

use std::io::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{axis_angle_to_rotation, exp_twist, pose_delta, Pose, PoseDelta, Vec3, Vec6};
use crate::plot::{line_chart, Series};

/// Pose estimator noise injected inside the servo loop.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EstimatorNoise {
    Exact,
    /// Per-axis Gaussian on the translation (m) and a random-axis Gaussian
    /// angle on the rotation (rad).
    Gaussian { sigma_translation: f64, sigma_rotation: f64 },
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ServoConfig {
    /// Control gain λ (1/s).
    pub lambda: f64,
    /// Integration timestep (s).
    pub dt: f64,
    pub max_steps: usize,
    /// Convergence threshold on ‖t‖ of the estimated error (m).
    pub translation_tol: f64,
    /// Convergence threshold on the estimated error angle (rad).
    pub rotation_tol: f64,
    pub noise: EstimatorNoise,
    /// Seed for the noise stream; ignored for an exact estimator.
    pub seed: u64,
}

impl Default for ServoConfig {
    fn default() -> Self {
        ServoConfig {
            lambda: 0.5,
            dt: 0.01,
            max_steps: 5000,
            translation_tol: 1e-3,
            rotation_tol: 1e-3,
            noise: EstimatorNoise::Exact,
            seed: 0,
        }
    }
}

impl ServoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!("servo gain must be > 0, got {}", self.lambda)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("servo dt must be > 0, got {}", self.dt)));
        }
        if self.lambda * self.dt >= 1.0 {
            return Err(Error::InvalidParameter(format!(
                "lambda*dt = {} >= 1 makes the discrete loop overshoot or diverge",
                self.lambda * self.dt
            )));
        }
        if self.max_steps == 0 {
            return Err(Error::InvalidParameter("max_steps must be >= 1".into()));
        }
        if !(self.translation_tol > 0.0 && self.rotation_tol > 0.0) {
            return Err(Error::InvalidParameter("convergence tolerances must be > 0".into()));
        }
        if let EstimatorNoise::Gaussian { sigma_translation, sigma_rotation } = self.noise {
            if sigma_translation < 0.0 || sigma_rotation < 0.0 {
                return Err(Error::InvalidParameter("noise sigmas must be >= 0".into()));
            }
        }
        Ok(())
    }
}

/// One logged control step.
#[derive(Clone, Debug)]
pub struct ServoStep {
    pub step: usize,
    pub time: f64,
    /// Camera pose in the world (object) frame, W = T⁻¹.
    pub camera_pose: Pose,
    /// Commanded camera twist (vx, vy, vz, ωx, ωy, ωz).
    pub velocity: Vec6,
    /// Estimated error Δr = (t; θu).
    pub error: Vec6,
}

#[derive(Clone, Debug)]
pub struct ServoTrajectory {
    pub records: Vec<ServoStep>,
    pub converged: bool,
    steps_taken: usize,
}

impl ServoTrajectory {
    /// Number of integration steps actually applied (one fewer than the
    /// record count when the loop converged on entry).
    pub fn steps(&self) -> usize {
        self.steps_taken
    }

    pub fn final_error(&self) -> Vec6 {
        self.records.last().map(|r| r.error).unwrap_or_else(Vec6::zeros)
    }
}

/// Proportional control law: v = −λ·(ΔRᵀ·t ; θu), translation part first. The
/// transpose maps the error translation into the current camera frame, which
/// is where the velocity is expressed.
pub fn pbvs_velocity(delta: &PoseDelta, lambda: f64) -> Vec6 {
    let r = delta.rotation();
    let vt = -lambda * (r.transpose() * delta.translation);
    let vw = -lambda * delta.angle * delta.axis;
    Vec6::new(vt.x, vt.y, vt.z, vw.x, vw.y, vw.z)
}

/// Applies a body-frame twist for one timestep: W ← W·exp(v·dt).
pub fn integrate_camera(pose: &Pose, velocity: &Vec6, dt: f64) -> Pose {
    pose.compose(&exp_twist(velocity, dt))
}

/// Builds the in-loop estimator for a noise model. The exact variant is the
/// identity; the Gaussian variant perturbs translation per axis and composes
/// a random-axis rotation with a Gaussian angle.
pub fn make_estimator(noise: EstimatorNoise, seed: u64) -> impl FnMut(&Pose) -> Pose {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    move |truth: &Pose| match noise {
        EstimatorNoise::Exact => truth.clone(),
        EstimatorNoise::Gaussian { sigma_translation, sigma_rotation } => {
            let nt = Normal::new(0.0, sigma_translation.max(f64::MIN_POSITIVE)).unwrap();
            let nr = Normal::new(0.0, sigma_rotation.max(f64::MIN_POSITIVE)).unwrap();
            let t = truth.translation()
                + Vec3::new(nt.sample(&mut rng), nt.sample(&mut rng), nt.sample(&mut rng));
            let axis = loop {
                let a = Vec3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                );
                let n = a.norm();
                if n > 1e-3 && n <= 1.0 {
                    break a / n;
                }
            };
            let angle = if sigma_rotation > 0.0 { nr.sample(&mut rng) } else { 0.0 };
            let r = axis_angle_to_rotation(&axis, angle) * truth.rotation();
            Pose::new(r, t).expect("noise perturbation kept rotation orthonormal")
        }
    }
}

/// Runs the closed loop: estimate → Δr → velocity → integrate, until the
/// estimated error drops below both tolerances or `max_steps` is reached.
///
/// Divergence guard: once the estimated error norm exceeds twice its running
/// minimum (with a floor well above the convergence tolerances so estimator
/// noise near the goal cannot trip it), the loop aborts and returns the
/// trajectory inside the error.
pub fn run_servo<F>(
    initial: &Pose,
    desired: &Pose,
    cfg: &ServoConfig,
    mut estimator: F,
) -> Result<ServoTrajectory>
where
    F: FnMut(&Pose) -> Pose,
{
    cfg.validate()?;
    let mut truth = initial.clone();
    let mut camera = truth.inverse();
    let mut records = Vec::new();
    let mut running_min = f64::INFINITY;
    let guard_floor = 20.0 * (cfg.translation_tol + cfg.rotation_tol);

    for step in 0..=cfg.max_steps {
        let estimated = estimator(&truth);
        let delta = pose_delta(&estimated, desired);
        let error = delta.as_vec6();
        let err_norm = error.norm();

        if delta.translation.norm() < cfg.translation_tol && delta.angle.abs() < cfg.rotation_tol {
            records.push(ServoStep {
                step,
                time: step as f64 * cfg.dt,
                camera_pose: camera,
                velocity: Vec6::zeros(),
                error,
            });
            return Ok(ServoTrajectory { records, converged: true, steps_taken: step });
        }

        if err_norm > 2.0 * running_min.max(guard_floor) {
            records.push(ServoStep {
                step,
                time: step as f64 * cfg.dt,
                camera_pose: camera,
                velocity: Vec6::zeros(),
                error,
            });
            let trajectory =
                Box::new(ServoTrajectory { records, converged: false, steps_taken: step });
            return Err(Error::Divergence { trajectory });
        }
        running_min = running_min.min(err_norm);

        if step == cfg.max_steps {
            records.push(ServoStep {
                step,
                time: step as f64 * cfg.dt,
                camera_pose: camera,
                velocity: Vec6::zeros(),
                error,
            });
            break;
        }

        let velocity = pbvs_velocity(&delta, cfg.lambda);
        records.push(ServoStep {
            step,
            time: step as f64 * cfg.dt,
            camera_pose: camera.clone(),
            velocity,
            error,
        });
        camera = integrate_camera(&camera, &velocity, cfg.dt);
        truth = camera.inverse();
    }

    Ok(ServoTrajectory { records, converged: false, steps_taken: cfg.max_steps })
}

/// Writes the trajectory as CSV (step, time, error 6-vector, velocity
/// 6-vector, camera position), optionally with SVG plots of the error,
/// velocity, and position time series next to it.
pub fn export_trajectory(traj: &ServoTrajectory, csv_path: &Path, svg_stem: Option<&Path>) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(csv_path)?);
    writeln!(
        out,
        "step,time,err_tx,err_ty,err_tz,err_rx,err_ry,err_rz,vx,vy,vz,wx,wy,wz,cam_x,cam_y,cam_z"
    )?;
    for r in &traj.records {
        let p = r.camera_pose.translation();
        write!(out, "{},{:.8e}", r.step, r.time)?;
        for i in 0..6 {
            write!(out, ",{:.8e}", r.error[i])?;
        }
        for i in 0..6 {
            write!(out, ",{:.8e}", r.velocity[i])?;
        }
        writeln!(out, ",{:.8e},{:.8e},{:.8e}", p.x, p.y, p.z)?;
    }
    out.flush()?;

    if let Some(stem) = svg_stem {
        let times: Vec<f64> = traj.records.iter().map(|r| r.time).collect();
        let comp = |f: &dyn Fn(&ServoStep) -> f64| -> Vec<(f64, f64)> {
            times.iter().cloned().zip(traj.records.iter().map(f)).collect()
        };
        let err_labels = ["tx", "ty", "tz", "θux", "θuy", "θuz"];
        let err_series: Vec<Series> = (0..6)
            .map(|i| Series::new(err_labels[i], comp(&|r: &ServoStep| r.error[i])))
            .collect();
        let vel_labels = ["vx", "vy", "vz", "ωx", "ωy", "ωz"];
        let vel_series: Vec<Series> = (0..6)
            .map(|i| Series::new(vel_labels[i], comp(&|r: &ServoStep| r.velocity[i])))
            .collect();
        let pos_labels = ["x", "y", "z"];
        let pos_series: Vec<Series> = (0..3)
            .map(|i| {
                Series::new(pos_labels[i], comp(&|r: &ServoStep| r.camera_pose.translation()[i]))
            })
            .collect();
        let write_svg = |suffix: &str, title: &str, ylab: &str, series: &[Series]| -> Result<()> {
            let mut path = stem.as_os_str().to_owned();
            path.push(suffix);
            std::fs::write(std::path::PathBuf::from(path), line_chart(title, "time (s)", ylab, series))?;
            Ok(())
        };
        write_svg("_error.svg", "pose error Δr", "m / rad", &err_series)?;
        write_svg("_velocity.svg", "camera velocity", "m/s / rad/s", &vel_series)?;
        write_svg("_position.svg", "camera position", "m", &pos_series)?;
    }
    Ok(())
}
