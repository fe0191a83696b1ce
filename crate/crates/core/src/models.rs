//! Procedurally generated test models, so the repository ships no binary
//! assets. All generators are deterministic and centered at the origin.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::Vec3;
use crate::keypoints::PointCloud;

/// A cube surface with hemispherical bumps on three faces; asymmetric enough
/// that its pose is unambiguous. `diameter` is the exact largest pairwise
/// extent in meters.
pub fn cube_with_bumps(n: usize, diameter: f64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0BE);
    let half = 0.5 / 3f64.sqrt(); // unit-diameter cube half-edge
    let mut pts = Vec::with_capacity(n);

    // corners pin the diameter exactly
    for x in [-half, half] {
        for y in [-half, half] {
            for z in [-half, half] {
                pts.push(Vec3::new(x, y, z));
            }
        }
    }

    let bumps = [
        (Vec3::new(half, 0.2 * half, -0.1 * half), 0.35 * half, 0usize),
        (Vec3::new(-0.3 * half, half, 0.4 * half), 0.25 * half, 1),
        (Vec3::new(0.1 * half, -0.5 * half, half), 0.30 * half, 2),
    ];

    while pts.len() < n {
        if rng.gen_bool(0.25) {
            // bump surface point, pushed outward along the bump axis
            let (center, r, axis) = bumps[rng.gen_range(0..bumps.len())];
            let mut p;
            loop {
                p = Vec3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                );
                if p.norm_squared() <= 1.0 && p.norm_squared() > 1e-6 {
                    break;
                }
            }
            let mut q = center + p.normalize() * r * rng.gen_range(0.2..1.0);
            // keep the bump outside the cube face, clamped to the diameter
            q[axis] = q[axis].abs().min(half * 1.0);
            let mut out = center + (q - center) * 0.99;
            out[axis] = out[axis].clamp(-half, half);
            pts.push(out);
        } else {
            // random point on a cube face
            let face = rng.gen_range(0..6);
            let a = rng.gen_range(-half..half);
            let b = rng.gen_range(-half..half);
            let s = if face % 2 == 0 { half } else { -half };
            let p = match face / 2 {
                0 => Vec3::new(s, a, b),
                1 => Vec3::new(a, s, b),
                _ => Vec3::new(a, b, s),
            };
            pts.push(p);
        }
    }
    scale_to(pts, diameter)
}

/// An asymmetric L-shaped slab.
pub fn l_shape(n: usize, diameter: f64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(0x157A);
    let mut pts = vec![
        // extreme corners of the two arms
        Vec3::new(0.0, 0.0, 0.0),
        Vec3::new(1.0, 0.0, 0.0),
        Vec3::new(1.0, 0.3, 0.15),
        Vec3::new(0.0, 1.0, 0.0),
        Vec3::new(0.3, 1.0, 0.15),
    ];
    while pts.len() < n {
        let (x, y) = loop {
            let x = rng.gen_range(0.0..1.0);
            let y = rng.gen_range(0.0..1.0);
            if x <= 0.3 || y <= 0.3 {
                break (x, y);
            }
        };
        pts.push(Vec3::new(x, y, rng.gen_range(0.0..0.15)));
    }
    // center before scaling
    let c = pts.iter().sum::<Vec3>() / pts.len() as f64;
    scale_to(pts.into_iter().map(|p| p - c).collect(), diameter)
}

/// A flat plate exactly symmetric under a 180° rotation about z: every
/// generated point is paired with its image under that rotation.
pub fn symmetric_plate(n: usize, diameter: f64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(0x9147E);
    let mut pts = vec![
        Vec3::new(0.5, 0.0, 0.0),
        Vec3::new(-0.5, 0.0, 0.0),
        Vec3::new(0.0, 0.25, 0.02),
        Vec3::new(0.0, -0.25, 0.02),
    ];
    while pts.len() + 1 < n {
        let p = Vec3::new(
            rng.gen_range(-0.5..0.5),
            rng.gen_range(-0.25..0.25),
            rng.gen_range(-0.02..0.02),
        );
        pts.push(p);
        pts.push(Vec3::new(-p.x, -p.y, p.z));
    }
    scale_to(pts, diameter)
}

fn scale_to(pts: Vec<Vec3>, diameter: f64) -> PointCloud {
    let cloud = PointCloud::new(pts).expect("generator produced an empty cloud");
    let d = crate::keypoints::diameter(&cloud).expect("generator cloud too small");
    PointCloud::new(cloud.points().iter().map(|p| p * (diameter / d)).collect()).unwrap()
}

/// Looks up a procedural model by name.
pub fn by_name(name: &str, n: usize, diameter: f64) -> Option<PointCloud> {
    match name {
        "cube_with_bumps" => Some(cube_with_bumps(n, diameter)),
        "l_shape" => Some(l_shape(n, diameter)),
        "symmetric_plate" => Some(symmetric_plate(n, diameter)),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{axis_angle_to_rotation, Vec3};
    use crate::keypoints::diameter;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn diameters_are_exact() {
        for cloud in [
            cube_with_bumps(500, 0.25),
            l_shape(500, 0.25),
            symmetric_plate(500, 0.25),
        ] {
            assert_relative_eq!(diameter(&cloud).unwrap(), 0.25, epsilon = 1e-12);
        }
    }

    #[test]
    fn plate_is_exactly_symmetric() {
        let cloud = symmetric_plate(400, 0.25);
        let rot = axis_angle_to_rotation(&Vec3::z(), PI);
        for p in cloud.points() {
            let q = rot * p;
            let d = cloud
                .points()
                .iter()
                .map(|x| (x - q).norm())
                .fold(f64::INFINITY, f64::min);
            assert!(d < 1e-9, "missing symmetric partner, residual {d}");
        }
    }

    #[test]
    fn generators_are_deterministic() {
        assert_eq!(cube_with_bumps(300, 0.2).points(), cube_with_bumps(300, 0.2).points());
    }
}
