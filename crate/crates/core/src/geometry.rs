//! SE(3) poses, camera intrinsics, pinhole back-projection and axis-angle
//! conversions. All lengths are meters; rotations are stored as 3x3 matrices.

use nalgebra::{Matrix3, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Vec6 = Vector6<f64>;
pub type Mat3 = Matrix3<f64>;

/// Tolerance for rotation-matrix orthonormality checks.
pub const ROTATION_TOL: f64 = 1e-9;

/// A rigid transform: rotation matrix plus translation vector.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    rotation: Mat3,
    translation: Vec3,
}

impl Pose {
    /// Builds a pose, validating that `rotation` is a proper rotation
    /// (orthonormal with determinant +1, within [`ROTATION_TOL`]).
    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self> {
        let gram = rotation.transpose() * rotation - Mat3::identity();
        let ortho_err = gram.norm();
        if !ortho_err.is_finite() || ortho_err >= ROTATION_TOL {
            return Err(Error::InvalidRotation(format!(
                "|R^T R - I|_F = {ortho_err:.3e}"
            )));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() >= ROTATION_TOL {
            return Err(Error::InvalidRotation(format!("det(R) = {det}")));
        }
        if !translation.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidParameter("non-finite translation".into()));
        }
        Ok(Self { rotation, translation })
    }

    pub fn identity() -> Self {
        Self { rotation: Mat3::identity(), translation: Vec3::zeros() }
    }

    pub fn from_axis_angle(axis: &Vec3, angle: f64, translation: Vec3) -> Result<Self> {
        Self::new(axis_angle_to_rotation(axis, angle), translation)
    }

    /// Internal constructor for matrices that are rotations by construction
    /// (products of validated rotations, SVD output, Rodrigues output).
    pub(crate) fn from_parts(rotation: Mat3, translation: Vec3) -> Self {
        debug_assert!((rotation.determinant() - 1.0).abs() < 1e-6);
        Self { rotation, translation }
    }

    pub fn rotation(&self) -> &Mat3 {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    /// R·x + t
    pub fn transform(&self, point: &Vec3) -> Vec3 {
        self.rotation * point + self.translation
    }

    /// self ∘ other, i.e. (self ∘ other)·x = self·(other·x).
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::from_parts(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose::from_parts(rt, -(rt * self.translation))
    }
}

/// Pinhole camera intrinsics in pixels.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "focal lengths must be positive, got fx={fx}, fy={fy}"
            )));
        }
        Ok(Self { fx, fy, cx, cy })
    }

    /// Projects a camera-frame point to pixel coordinates. Returns `None`
    /// when the point is at or behind the camera.
    pub fn project(&self, p: &Vec3) -> Option<(f64, f64)> {
        if p.z <= 0.0 {
            return None;
        }
        Some((self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }
}

/// Back-projects pixel (u, v) at depth `z` into the camera frame.
pub fn backproject(u: f64, v: f64, z: f64, k: &CameraIntrinsics) -> Result<Vec3> {
    if !(z > 0.0 && z.is_finite()) {
        return Err(Error::InvalidDepth(z));
    }
    Ok(Vec3::new((u - k.cx) / k.fx * z, (v - k.cy) / k.fy * z, z))
}

/// Relative pose error: translation part plus the axis-angle of the rotation
/// part, the 6-vector (t, θu) used by the servo loop.
#[derive(Clone, Copy, Debug)]
pub struct PoseDelta {
    pub translation: Vec3,
    pub axis: Vec3,
    pub angle: f64,
}

impl PoseDelta {
    /// Stacks the error as (t; θu).
    pub fn as_vec6(&self) -> Vec6 {
        let r = self.axis * self.angle;
        Vec6::new(
            self.translation.x,
            self.translation.y,
            self.translation.z,
            r.x,
            r.y,
            r.z,
        )
    }

    pub fn rotation(&self) -> Mat3 {
        axis_angle_to_rotation(&self.axis, self.angle)
    }
}

/// Error between the current and desired pose, from ΔT = T_desired · T_current⁻¹.
pub fn pose_delta(current: &Pose, desired: &Pose) -> PoseDelta {
    let delta = desired.compose(&current.inverse());
    let (axis, angle) = rotation_to_axis_angle(delta.rotation());
    PoseDelta { translation: *delta.translation(), axis, angle }
}

fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rodrigues formula. `axis` must be unit length (normalized defensively for
/// tiny drift); angle 0 yields the identity.
pub fn axis_angle_to_rotation(axis: &Vec3, angle: f64) -> Mat3 {
    if angle == 0.0 {
        return Mat3::identity();
    }
    let n = axis.norm();
    debug_assert!((n - 1.0).abs() < 1e-6, "axis must be unit length");
    let u = axis / n;
    let k = skew(&u);
    Mat3::identity() + angle.sin() * k + (1.0 - angle.cos()) * (k * k)
}

/// Inverse of [`axis_angle_to_rotation`]. Returns (axis, angle) with
/// angle ∈ [0, π]. For angle ≈ 0 the axis is arbitrary and (0, 0, 1) is
/// returned; angles near π go through the symmetric-matrix branch to avoid
/// axis sign instability.
pub fn rotation_to_axis_angle(r: &Mat3) -> (Vec3, f64) {
    let trace = r.trace();
    let cos = ((trace - 1.0) / 2.0).clamp(-1.0, 1.0);
    let angle = cos.acos();

    if angle < 1e-12 {
        return (Vec3::new(0.0, 0.0, 1.0), 0.0);
    }

    if trace < -1.0 + 1e-6 {
        // angle ≈ π: R + I = 2 u uᵀ (plus O(π−θ) terms); take the column
        // with the largest diagonal for numerical stability.
        let b = (r + Mat3::identity()) / 2.0;
        let k = (0..3).max_by(|&i, &j| b[(i, i)].total_cmp(&b[(j, j)])).unwrap();
        let mut axis = Vec3::new(b[(0, k)], b[(1, k)], b[(2, k)]);
        axis /= axis.norm();
        // Fix the sign from the antisymmetric part when it is not fully
        // degenerate; at exactly π both signs are equivalent.
        let asym = Vec3::new(
            r[(2, 1)] - r[(1, 2)],
            r[(0, 2)] - r[(2, 0)],
            r[(1, 0)] - r[(0, 1)],
        );
        if asym.dot(&axis) < 0.0 {
            axis = -axis;
        }
        return (axis, angle);
    }

    let axis = Vec3::new(
        r[(2, 1)] - r[(1, 2)],
        r[(0, 2)] - r[(2, 0)],
        r[(1, 0)] - r[(0, 1)],
    ) / (2.0 * angle.sin());
    (axis / axis.norm(), angle)
}

/// SE(3) exponential of the twist ξ = (v; ω)·dt applied as a relative motion.
/// Uses the closed form with the left Jacobian so that half-steps compose
/// exactly into full steps.
pub fn exp_twist(twist: &Vec6, dt: f64) -> Pose {
    let v = Vec3::new(twist[0], twist[1], twist[2]) * dt;
    let w = Vec3::new(twist[3], twist[4], twist[5]) * dt;
    let theta = w.norm();
    if theta < 1e-12 {
        return Pose::from_parts(Mat3::identity(), v);
    }
    let k = skew(&w);
    let k2 = k * k;
    let a = (1.0 - theta.cos()) / (theta * theta);
    let b = (theta - theta.sin()) / (theta * theta * theta);
    let rotation = Mat3::identity() + (theta.sin() / theta) * k + a * k2;
    let jac = Mat3::identity() + a * k + b * k2;
    Pose::from_parts(rotation, jac * v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn rot_z_90() -> Mat3 {
        axis_angle_to_rotation(&Vec3::z(), FRAC_PI_2)
    }

    #[test]
    fn backproject_principal_ray() {
        let k = CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0).unwrap();
        let p = backproject(0.0, 0.0, 1.0, &k).unwrap();
        assert_eq!(p, Vec3::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn backproject_principal_point_maps_to_optical_axis() {
        let k = CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0).unwrap();
        for z in [0.1, 0.5, 2.0] {
            let p = backproject(320.0, 240.0, z, &k).unwrap();
            assert_eq!(p, Vec3::new(0.0, 0.0, z));
        }
    }

    #[test]
    fn backproject_hand_evaluated() {
        // u offset of 100 px from the principal point at fx = 500, Z = 0.5:
        // x = 100/500 * 0.5 = 0.1
        let k = CameraIntrinsics::new(500.0, 500.0, 220.0, 240.0).unwrap();
        let p = backproject(320.0, 240.0, 0.5, &k).unwrap();
        assert_relative_eq!(p.x, 0.1, epsilon = 1e-15);
        assert_relative_eq!(p.y, 0.0, epsilon = 1e-15);
        assert_eq!(p.z, 0.5);
    }

    #[test]
    fn backproject_rejects_bad_depth() {
        let k = CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0).unwrap();
        assert!(matches!(backproject(0.0, 0.0, 0.0, &k), Err(Error::InvalidDepth(_))));
        assert!(matches!(backproject(0.0, 0.0, -1.0, &k), Err(Error::InvalidDepth(_))));
        assert!(matches!(backproject(0.0, 0.0, f64::NAN, &k), Err(Error::InvalidDepth(_))));
    }

    #[test]
    fn backproject_linear_in_depth() {
        let k = CameraIntrinsics::new(525.0, 520.0, 319.5, 239.5).unwrap();
        let p1 = backproject(100.0, 50.0, 1.0, &k).unwrap();
        let p3 = backproject(100.0, 50.0, 3.0, &k).unwrap();
        assert_relative_eq!(p3.x, 3.0 * p1.x, epsilon = 1e-12);
        assert_relative_eq!(p3.y, 3.0 * p1.y, epsilon = 1e-12);
    }

    #[test]
    fn transform_identity_and_translation() {
        let p = Vec3::new(1.0, 2.0, 3.0);
        assert_eq!(Pose::identity().transform(&p), p);
        let t = Pose::new(Mat3::identity(), Vec3::new(0.0, 0.0, 1.0)).unwrap();
        assert_eq!(t.transform(&Vec3::zeros()), Vec3::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn transform_rotation_about_z() {
        let t = Pose::new(rot_z_90(), Vec3::zeros()).unwrap();
        let p = t.transform(&Vec3::x());
        assert_relative_eq!(p.x, 0.0, epsilon = 1e-15);
        assert_relative_eq!(p.y, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn invert_identity() {
        let inv = Pose::identity().inverse();
        assert_eq!(inv.rotation(), &Mat3::identity());
        assert_eq!(inv.translation(), &Vec3::zeros());
    }

    #[test]
    fn compose_with_inverse_is_identity() {
        let t = Pose::from_axis_angle(
            &Vec3::new(1.0, 2.0, -1.0).normalize(),
            0.7,
            Vec3::new(0.3, -0.2, 0.9),
        )
        .unwrap();
        let id = t.compose(&t.inverse());
        assert!((id.rotation() - Mat3::identity()).norm() < 1e-12);
        assert!(id.translation().norm() < 1e-12);
    }

    #[test]
    fn pose_new_rejects_reflection() {
        let mut m = Mat3::identity();
        m[(2, 2)] = -1.0;
        assert!(matches!(Pose::new(m, Vec3::zeros()), Err(Error::InvalidRotation(_))));
    }

    #[test]
    fn pose_delta_identity_pair_is_zero() {
        let t = Pose::from_axis_angle(&Vec3::y(), 0.3, Vec3::new(0.1, 0.2, 0.3)).unwrap();
        let d = pose_delta(&t, &t);
        assert_eq!(d.angle, 0.0);
        assert!(d.translation.norm() < 1e-15);
    }

    #[test]
    fn pose_delta_pure_translation() {
        let desired = Pose::new(Mat3::identity(), Vec3::new(0.1, 0.0, 0.0)).unwrap();
        let d = pose_delta(&Pose::identity(), &desired);
        assert_eq!(d.angle, 0.0);
        assert_relative_eq!(d.translation.x, 0.1, epsilon = 1e-15);
    }

    #[test]
    fn pose_delta_mirrors_servo_displacement_fixture() {
        // Desk-scale displacement of the same shape as a large 6-DoF
        // positioning task: (-400mm, -140mm, -240mm) plus rotation.
        let current = Pose::identity();
        let axis = Vec3::new(0.1085, 0.6422, 0.6695).normalize();
        let desired = Pose::from_axis_angle(
            &axis,
            0.93,
            Vec3::new(-0.400, -0.140, -0.240),
        )
        .unwrap();
        let d = pose_delta(&current, &desired);
        assert_relative_eq!(d.translation.x, -0.400, epsilon = 1e-12);
        assert_relative_eq!(d.translation.y, -0.140, epsilon = 1e-12);
        assert_relative_eq!(d.translation.z, -0.240, epsilon = 1e-12);
        assert_relative_eq!(d.angle, 0.93, epsilon = 1e-12);
    }

    #[test]
    fn axis_angle_zero_gives_identity() {
        assert_eq!(axis_angle_to_rotation(&Vec3::x(), 0.0), Mat3::identity());
        let (axis, angle) = rotation_to_axis_angle(&Mat3::identity());
        assert_eq!(angle, 0.0);
        assert_eq!(axis, Vec3::z());
    }

    #[test]
    fn axis_angle_z_quarter_turn() {
        let r = rot_z_90();
        // Hand-evaluated Rodrigues at θ=π/2 about z.
        let expected = Mat3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert!((r - expected).norm() < 1e-15);
    }

    #[test]
    fn axis_angle_near_pi_branch() {
        for axis in [
            Vec3::x(),
            Vec3::new(1.0, 1.0, 0.0).normalize(),
            Vec3::new(-0.2, 0.5, 0.9).normalize(),
        ] {
            for angle in [PI - 1e-8, PI] {
                let r = axis_angle_to_rotation(&axis, angle);
                let (a, th) = rotation_to_axis_angle(&r);
                assert_relative_eq!(th, angle, epsilon = 1e-6);
                // Axis sign is ambiguous at exactly π.
                let err = (a - axis).norm().min((a + axis).norm());
                assert!(err < 1e-5, "axis error {err} at angle {angle}");
            }
        }
    }

    #[test]
    fn exp_twist_zero_and_pure_translation() {
        let p = exp_twist(&Vec6::zeros(), 0.01);
        assert_eq!(p.rotation(), &Mat3::identity());
        assert_eq!(p.translation(), &Vec3::zeros());

        let v = Vec6::new(1.0, -2.0, 0.5, 0.0, 0.0, 0.0);
        let p = exp_twist(&v, 0.1);
        assert_eq!(p.rotation(), &Mat3::identity());
        assert_relative_eq!(p.translation().x, 0.1, epsilon = 1e-15);
    }

    #[test]
    fn exp_twist_half_steps_compose() {
        let v = Vec6::new(0.0, 0.0, 0.0, 0.3, -0.1, 0.7);
        let full = exp_twist(&v, 0.2);
        let half = exp_twist(&v, 0.1);
        let two = half.compose(&half);
        assert!((full.rotation() - two.rotation()).norm() < 1e-12);
        assert!((full.translation() - two.translation()).norm() < 1e-12);
    }

    proptest! {
        #[test]
        fn rodrigues_round_trip(
            ax in -1.0f64..1.0, ay in -1.0f64..1.0, az in -1.0f64..1.0,
            angle in 1e-6..(PI - 1e-6),
        ) {
            let v = Vec3::new(ax, ay, az);
            prop_assume!(v.norm() > 1e-3);
            let axis = v.normalize();
            let r = axis_angle_to_rotation(&axis, angle);
            let (a, th) = rotation_to_axis_angle(&r);
            prop_assert!((th - angle).abs() < 1e-9);
            prop_assert!((a - axis).norm() < 1e-8);
        }

        #[test]
        fn compose_invert_preserves_invariants(
            seq in proptest::collection::vec((0.0f64..PI, -1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0), 1..20)
        ) {
            let mut t = Pose::identity();
            for (angle, x, y, z) in seq {
                let v = Vec3::new(x, y, z);
                if v.norm() < 1e-3 { continue; }
                let step = Pose::from_axis_angle(&v.normalize(), angle, v).unwrap();
                t = t.compose(&step).compose(&step.inverse()).compose(&step);
            }
            let gram = (t.rotation().transpose() * t.rotation() - Mat3::identity()).norm();
            prop_assert!(gram < 1e-9);
            prop_assert!((t.rotation().determinant() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn compose_is_associative_on_points(
            angle in 0.0f64..PI, x in -1.0f64..1.0, y in -1.0f64..1.0, z in -1.0f64..1.0,
            px in -1.0f64..1.0, py in -1.0f64..1.0, pz in -1.0f64..1.0,
        ) {
            let v = Vec3::new(x, y, z);
            prop_assume!(v.norm() > 1e-3);
            let a = Pose::from_axis_angle(&v.normalize(), angle, v).unwrap();
            let b = Pose::from_axis_angle(&Vec3::z(), 0.4, Vec3::new(0.1, 0.0, -0.2)).unwrap();
            let p = Vec3::new(px, py, pz);
            let lhs = a.compose(&b).transform(&p);
            let rhs = a.transform(&b.transform(&p));
            prop_assert!((lhs - rhs).norm() < 1e-12);
        }
    }
}
