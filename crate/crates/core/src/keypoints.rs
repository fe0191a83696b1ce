//! Reference keypoint selection by farthest point sampling, object diameter,
//! and the ASCII PLY / JSON interchange for models and keypoint sets.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;

/// Clouds larger than this are uniformly strided down before FPS.
pub const FPS_SUBSAMPLE_LIMIT: usize = 50_000;
/// Clouds up to this size use the exact O(n²) diameter scan.
const DIAMETER_BRUTE_LIMIT: usize = 10_000;

/// An unordered 3D point cloud in meters.
#[derive(Clone, Debug)]
pub struct PointCloud {
    points: Vec<Vec3>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Result<Self> {
        if points.is_empty() || !points.iter().all(|p| p.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidCloud);
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Vec3 {
        self.points.iter().sum::<Vec3>() / self.points.len() as f64
    }

    /// Reads an ASCII PLY file with a vertex element carrying x, y, z.
    /// `scale` converts the file unit into meters (1.0 for meters, 1e-3 for
    /// millimeters).
    pub fn from_ply(path: &Path, scale: f64) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let reader = BufReader::new(file);
        let mut lines = reader.lines().enumerate();

        let parse_err = |line: usize, message: &str| Error::Parse {
            line: line + 1,
            message: message.to_string(),
        };

        match lines.next() {
            Some((_, Ok(l))) if l.trim() == "ply" => {}
            Some((n, _)) => return Err(parse_err(n, "expected 'ply' magic")),
            None => return Err(parse_err(0, "empty file")),
        }

        let mut vertex_count: Option<usize> = None;
        let mut in_vertex_element = false;
        // property order within the vertex element, to find x/y/z columns
        let mut columns: Vec<String> = Vec::new();
        let mut header_end = 0;
        for (n, line) in &mut lines {
            let line = line?;
            let tokens: Vec<&str> = line.split_whitespace().collect();
            match tokens.as_slice() {
                ["format", "ascii", ..] | ["comment", ..] | [] => {}
                ["format", other, ..] => {
                    return Err(parse_err(n, &format!("unsupported format '{other}', only ascii")));
                }
                ["element", "vertex", count] => {
                    vertex_count = Some(count.parse().map_err(|_| parse_err(n, "bad vertex count"))?);
                    in_vertex_element = true;
                }
                ["element", ..] => in_vertex_element = false,
                ["property", _ty, name] if in_vertex_element => columns.push((*name).to_string()),
                ["property", ..] => {}
                ["end_header"] => {
                    header_end = n;
                    break;
                }
                _ => return Err(parse_err(n, &format!("unrecognized header line '{line}'"))),
            }
        }

        let count = vertex_count.ok_or_else(|| parse_err(header_end, "no vertex element"))?;
        let idx = |name: &str| {
            columns
                .iter()
                .position(|c| c == name)
                .ok_or_else(|| parse_err(header_end, &format!("vertex element lacks property '{name}'")))
        };
        let (ix, iy, iz) = (idx("x")?, idx("y")?, idx("z")?);

        let mut points = Vec::with_capacity(count);
        for (n, line) in &mut lines {
            if points.len() == count {
                break;
            }
            let line = line?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            let get = |i: usize| -> Result<f64> {
                fields
                    .get(i)
                    .and_then(|f| f.parse::<f64>().ok())
                    .ok_or_else(|| parse_err(n, "bad vertex row"))
            };
            points.push(Vec3::new(get(ix)?, get(iy)?, get(iz)?) * scale);
        }
        if points.len() != count {
            return Err(Error::Parse {
                line: 0,
                message: format!("expected {count} vertices, found {}", points.len()),
            });
        }
        Self::new(points)
    }
}

/// The M reference keypoints selected on the object model (world frame).
#[derive(Clone, Debug)]
pub struct KeypointSet {
    points: Vec<Vec3>,
    seed_index: usize,
}

impl KeypointSet {
    pub fn new(points: Vec<Vec3>, seed_index: usize) -> Result<Self> {
        if points.len() < 3 {
            return Err(Error::InvalidParameter(format!(
                "keypoint set needs at least 3 points, got {}",
                points.len()
            )));
        }
        for i in 0..points.len() {
            for j in (i + 1)..points.len() {
                if points[i] == points[j] {
                    return Err(Error::InvalidParameter(format!(
                        "keypoints {i} and {j} coincide"
                    )));
                }
            }
        }
        Ok(Self { points, seed_index })
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn seed_index(&self) -> usize {
        self.seed_index
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let file = KeypointFile {
            m: self.points.len(),
            unit: "m".to_string(),
            points: self.points.iter().map(|p| [p.x, p.y, p.z]).collect(),
            seed_index: self.seed_index,
        };
        let mut out = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(&mut out, &file)?;
        out.write_all(b"\n")?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let file: KeypointFile = serde_json::from_reader(std::fs::File::open(path)?)?;
        if file.points.len() != file.m {
            return Err(Error::Parse {
                line: 0,
                message: format!("M = {} but {} points listed", file.m, file.points.len()),
            });
        }
        if file.unit != "m" {
            return Err(Error::Parse {
                line: 0,
                message: format!("unsupported unit '{}', keypoint files are meters", file.unit),
            });
        }
        Self::new(
            file.points.iter().map(|p| Vec3::new(p[0], p[1], p[2])).collect(),
            file.seed_index,
        )
    }
}

#[derive(Serialize, Deserialize)]
struct KeypointFile {
    #[serde(rename = "M")]
    m: usize,
    unit: String,
    points: Vec<[f64; 3]>,
    seed_index: usize,
}

/// Outcome of farthest point sampling: the keypoints plus the greedy
/// min-distance at each selection step (non-increasing; its last entry is the
/// covering radius).
#[derive(Clone, Debug)]
pub struct FpsSelection {
    pub keypoints: KeypointSet,
    pub greedy_radii: Vec<f64>,
}

impl FpsSelection {
    pub fn covering_radius(&self) -> f64 {
        self.greedy_radii.last().copied().unwrap_or(0.0)
    }
}

/// Greedy max-min farthest point sampling. Each selected point maximizes its
/// minimum distance to the already selected ones; ties go to the lowest point
/// index. Clouds above [`FPS_SUBSAMPLE_LIMIT`] are strided down first.
pub fn farthest_point_sample(cloud: &PointCloud, m: usize, seed_index: usize) -> Result<FpsSelection> {
    if m < 1 {
        return Err(Error::InvalidParameter("M must be at least 1".into()));
    }
    let stride = cloud.len().div_ceil(FPS_SUBSAMPLE_LIMIT);
    let pts: Vec<Vec3> = cloud.points().iter().step_by(stride.max(1)).copied().collect();
    if m > pts.len() {
        return Err(Error::NotEnoughPoints { requested: m, available: pts.len() });
    }
    if seed_index >= pts.len() {
        return Err(Error::InvalidParameter(format!(
            "seed index {seed_index} out of range for {} points",
            pts.len()
        )));
    }

    let mut selected = Vec::with_capacity(m);
    let mut radii = Vec::with_capacity(m);
    let mut min_dist = vec![f64::INFINITY; pts.len()];
    let mut current = seed_index;
    selected.push(pts[current]);
    radii.push(f64::INFINITY);

    for _ in 1..m {
        let mut best = 0;
        let mut best_dist = -1.0;
        for (i, p) in pts.iter().enumerate() {
            let d = (p - pts[current]).norm();
            if d < min_dist[i] {
                min_dist[i] = d;
            }
            // strict > keeps the lowest index on ties
            if min_dist[i] > best_dist {
                best_dist = min_dist[i];
                best = i;
            }
        }
        current = best;
        selected.push(pts[current]);
        radii.push(best_dist);
    }
    Ok(FpsSelection {
        keypoints: KeypointSet::new(selected, seed_index)?,
        greedy_radii: radii,
    })
}

/// Maximum pairwise distance of the cloud. Exact: brute force up to 10k
/// points, convex-hull-vertex reduction beyond (with a brute-force fallback
/// for degenerate clouds).
pub fn diameter(cloud: &PointCloud) -> Result<f64> {
    if cloud.len() < 2 {
        return Err(Error::NotEnoughPoints { requested: 2, available: cloud.len() });
    }
    let pts = cloud.points();
    if pts.len() <= DIAMETER_BRUTE_LIMIT {
        return Ok(brute_diameter(pts));
    }
    match convex_hull_vertices(pts) {
        Some(hull) => {
            let hull_pts: Vec<Vec3> = hull.into_iter().map(|i| pts[i]).collect();
            Ok(brute_diameter(&hull_pts))
        }
        None => Ok(brute_diameter(pts)),
    }
}

fn brute_diameter(pts: &[Vec3]) -> f64 {
    let mut best: f64 = 0.0;
    for i in 0..pts.len() {
        for j in (i + 1)..pts.len() {
            let d2 = (pts[i] - pts[j]).norm_squared();
            if d2 > best {
                best = d2;
            }
        }
    }
    best.sqrt()
}

/// Quickhull returning the indices of hull vertices, or `None` when the input
/// is degenerate (collinear or coplanar within tolerance).
fn convex_hull_vertices(pts: &[Vec3]) -> Option<Vec<usize>> {
    #[derive(Clone)]
    struct Face {
        verts: [usize; 3],
        normal: Vec3,
        offset: f64,
        outside: Vec<usize>,
        alive: bool,
    }

    let scale = pts
        .iter()
        .map(|p| p.norm())
        .fold(0.0f64, f64::max)
        .max(1e-12);
    let eps = 1e-10 * scale;

    // initial extreme pair: farthest apart among the 6 axis extremes
    let mut extremes = [0usize; 6];
    for (i, p) in pts.iter().enumerate() {
        for a in 0..3 {
            if p[a] < pts[extremes[2 * a]][a] {
                extremes[2 * a] = i;
            }
            if p[a] > pts[extremes[2 * a + 1]][a] {
                extremes[2 * a + 1] = i;
            }
        }
    }
    let (mut i0, mut i1) = (extremes[0], extremes[1]);
    let mut best = -1.0;
    for &a in &extremes {
        for &b in &extremes {
            let d = (pts[a] - pts[b]).norm_squared();
            if d > best {
                best = d;
                i0 = a;
                i1 = b;
            }
        }
    }
    if best.sqrt() < eps {
        return None;
    }

    // farthest from the line i0-i1
    let dir = (pts[i1] - pts[i0]).normalize();
    let (i2, line_d) = pts
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let v = p - pts[i0];
            (i, (v - dir * v.dot(&dir)).norm())
        })
        .max_by(|a, b| a.1.total_cmp(&b.1))?;
    if line_d < eps {
        return None;
    }

    // farthest from the plane i0-i1-i2
    let n = (pts[i1] - pts[i0]).cross(&(pts[i2] - pts[i0])).normalize();
    let (i3, plane_d) = pts
        .iter()
        .enumerate()
        .map(|(i, p)| (i, (p - pts[i0]).dot(&n).abs()))
        .max_by(|a, b| a.1.total_cmp(&b.1))?;
    if plane_d < eps {
        return None;
    }

    let centroid = (pts[i0] + pts[i1] + pts[i2] + pts[i3]) / 4.0;
    let make_face = |a: usize, b: usize, c: usize| -> Face {
        let mut normal = (pts[b] - pts[a]).cross(&(pts[c] - pts[a]));
        let nn = normal.norm();
        if nn > 0.0 {
            normal /= nn;
        }
        let mut verts = [a, b, c];
        if normal.dot(&(centroid - pts[a])) > 0.0 {
            normal = -normal;
            verts.swap(1, 2);
        }
        let offset = normal.dot(&pts[verts[0]]);
        Face { verts, normal, offset, outside: Vec::new(), alive: true }
    };

    let mut faces = vec![
        make_face(i0, i1, i2),
        make_face(i0, i1, i3),
        make_face(i0, i2, i3),
        make_face(i1, i2, i3),
    ];

    let assign = |faces: &mut Vec<Face>, idx: usize| {
        let p = &pts[idx];
        for f in faces.iter_mut() {
            if f.alive && f.normal.dot(p) - f.offset > eps {
                f.outside.push(idx);
                return;
            }
        }
    };
    for i in 0..pts.len() {
        assign(&mut faces, i);
    }

    loop {
        let Some(fi) = faces.iter().position(|f| f.alive && !f.outside.is_empty()) else {
            break;
        };
        let apex = *faces[fi]
            .outside
            .iter()
            .max_by(|&&a, &&b| {
                let da = faces[fi].normal.dot(&pts[a]);
                let db = faces[fi].normal.dot(&pts[b]);
                da.total_cmp(&db)
            })
            .unwrap();
        let apex_p = pts[apex];

        // visible set and its orphaned outside points
        let mut orphans = Vec::new();
        let mut visible = Vec::new();
        for (i, f) in faces.iter_mut().enumerate() {
            if f.alive && f.normal.dot(&apex_p) - f.offset > eps {
                visible.push(i);
                f.alive = false;
                orphans.append(&mut f.outside);
            }
        }

        // horizon: directed edges of visible faces whose reverse is not in
        // the visible set
        let mut edges = Vec::new();
        for &vi in &visible {
            let [a, b, c] = faces[vi].verts;
            edges.push((a, b));
            edges.push((b, c));
            edges.push((c, a));
        }
        let mut new_faces = Vec::new();
        for &(a, b) in &edges {
            if !edges.contains(&(b, a)) {
                new_faces.push(make_face(a, b, apex));
            }
        }
        let start = faces.len();
        faces.extend(new_faces);
        for idx in orphans {
            if idx == apex {
                continue;
            }
            let p = &pts[idx];
            for f in faces[start..].iter_mut() {
                if f.normal.dot(p) - f.offset > eps {
                    f.outside.push(idx);
                    break;
                }
            }
        }
    }

    let mut verts: Vec<usize> = faces
        .iter()
        .filter(|f| f.alive)
        .flat_map(|f| f.verts)
        .collect();
    verts.sort_unstable();
    verts.dedup();
    Some(verts)
}
