//! Minimal 3D KD-tree for radius queries over polytope origins.

use nalgebra::Point3;

#[derive(Debug, Clone)]
struct Node {
    point: Point3<f64>,
    id: u64,
    axis: usize,
    left: Option<Box<Node>>,
    right: Option<Box<Node>>,
}

/// Static KD-tree; rebuild after bulk insertion.
#[derive(Debug, Clone, Default)]
pub struct KdTree {
    root: Option<Box<Node>>,
    len: usize,
}

impl KdTree {
    pub fn build(items: impl IntoIterator<Item = (u64, Point3<f64>)>) -> Self {
        let mut pts: Vec<(u64, Point3<f64>)> = items.into_iter().collect();
        // Sort by id so ties in the median split are deterministic.
        pts.sort_by_key(|(id, _)| *id);
        let len = pts.len();
        Self {
            root: Self::build_rec(&mut pts, 0),
            len,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    fn build_rec(pts: &mut [(u64, Point3<f64>)], depth: usize) -> Option<Box<Node>> {
        if pts.is_empty() {
            return None;
        }
        let axis = depth % 3;
        pts.sort_by(|a, b| a.1[axis].total_cmp(&b.1[axis]).then(a.0.cmp(&b.0)));
        let mid = pts.len() / 2;
        let (left, rest) = pts.split_at_mut(mid);
        let ((id, point), right) = rest.split_first_mut().unwrap();
        Some(Box::new(Node {
            point: *point,
            id: *id,
            axis,
            left: Self::build_rec(left, depth + 1),
            right: Self::build_rec(right, depth + 1),
        }))
    }

    /// Ids of all points within `radius` (closed) of `center`, sorted.
    pub fn radius_search(&self, center: &Point3<f64>, radius: f64) -> Vec<u64> {
        let mut out = Vec::new();
        let r2 = radius * radius;
        Self::search_rec(&self.root, center, radius, r2, &mut out);
        out.sort_unstable();
        out
    }

    fn search_rec(
        node: &Option<Box<Node>>,
        center: &Point3<f64>,
        radius: f64,
        r2: f64,
        out: &mut Vec<u64>,
    ) {
        let Some(n) = node else { return };
        if (n.point - center).norm_squared() <= r2 {
            out.push(n.id);
        }
        let delta = center[n.axis] - n.point[n.axis];
        if delta <= radius {
            Self::search_rec(&n.left, center, radius, r2, out);
        }
        if delta >= -radius {
            Self::search_rec(&n.right, center, radius, r2, out);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn matches_brute_force() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<(u64, Point3<f64>)> = (0..300)
            .map(|i| {
                (
                    i,
                    Point3::new(
                        rng.gen_range(-20.0..20.0),
                        rng.gen_range(-20.0..20.0),
                        rng.gen_range(-5.0..5.0),
                    ),
                )
            })
            .collect();
        let tree = KdTree::build(pts.iter().copied());
        for _ in 0..50 {
            let c = Point3::new(
                rng.gen_range(-20.0..20.0),
                rng.gen_range(-20.0..20.0),
                rng.gen_range(-5.0..5.0),
            );
            let r = rng.gen_range(0.5..15.0);
            let mut expect: Vec<u64> = pts
                .iter()
                .filter(|(_, p)| (p - c).norm() <= r)
                .map(|(id, _)| *id)
                .collect();
            expect.sort_unstable();
            assert_eq!(tree.radius_search(&c, r), expect);
        }
    }

    #[test]
    fn empty_tree() {
        let tree = KdTree::build(std::iter::empty());
        assert!(tree.is_empty());
        assert!(tree.radius_search(&Point3::origin(), 1.0).is_empty());
    }
}
