//! A small kd-tree over 3D points, used for ICP correspondence search and
//! the closest-point matching of the symmetric pose metric.

use crate::geometry::Vec3;

pub struct KdTree {
    points: Vec<Vec3>,
    root: Option<Box<Node>>,
}

struct Node {
    point: usize,
    axis: usize,
    left: Option<Box<Node>>,
    right: Option<Box<Node>>,
}

impl KdTree {
    pub fn build(points: &[Vec3]) -> Self {
        let mut indices: Vec<usize> = (0..points.len()).collect();
        let root = Self::build_node(points, &mut indices, 0);
        Self { points: points.to_vec(), root }
    }

    fn build_node(points: &[Vec3], indices: &mut [usize], depth: usize) -> Option<Box<Node>> {
        if indices.is_empty() {
            return None;
        }
        let axis = depth % 3;
        let mid = indices.len() / 2;
        indices.select_nth_unstable_by(mid, |&a, &b| points[a][axis].total_cmp(&points[b][axis]));
        let point = indices[mid];
        let (left, right) = indices.split_at_mut(mid);
        let right = &mut right[1..];
        Some(Box::new(Node {
            point,
            axis,
            left: Self::build_node(points, left, depth + 1),
            right: Self::build_node(points, right, depth + 1),
        }))
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index and distance of the nearest stored point to `query`.
    pub fn nearest(&self, query: &Vec3) -> Option<(usize, f64)> {
        let root = self.root.as_ref()?;
        let mut best = (root.point, (self.points[root.point] - query).norm_squared());
        self.search(root, query, &mut best);
        Some((best.0, best.1.sqrt()))
    }

    fn search(&self, node: &Node, query: &Vec3, best: &mut (usize, f64)) {
        let d2 = (self.points[node.point] - query).norm_squared();
        if d2 < best.1 {
            *best = (node.point, d2);
        }
        let diff = query[node.axis] - self.points[node.point][node.axis];
        let (near, far) = if diff < 0.0 {
            (&node.left, &node.right)
        } else {
            (&node.right, &node.left)
        };
        if let Some(n) = near {
            self.search(n, query, best);
        }
        if diff * diff < best.1 {
            if let Some(f) = far {
                self.search(f, query, best);
            }
        }
    }
}
