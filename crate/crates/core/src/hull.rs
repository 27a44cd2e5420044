//! Incremental 3D convex hull over a fixed point set.
//!
//! Deterministic: points are inserted in index order, facet vertex triplets
//! are emitted in a canonical rotation, and the facet list is sorted.

use nalgebra::{Point3, Vector3};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HullError {
    #[error("need at least 4 points, got {0}")]
    TooFewPoints(usize),
    #[error("input points are degenerate (collinear or coplanar)")]
    Degenerate,
}

#[derive(Debug, Clone)]
struct Face {
    verts: [usize; 3],
    normal: Vector3<f64>,
    offset: f64, // plane: normal . x = offset
    alive: bool,
}

impl Face {
    fn new(verts: [usize; 3], pts: &[Point3<f64>], interior: &Point3<f64>) -> Self {
        let [a, b, c] = verts;
        let mut normal = (pts[b] - pts[a]).cross(&(pts[c] - pts[a]));
        let mut verts = verts;
        if normal.dot(&(interior - pts[a])) > 0.0 {
            verts.swap(1, 2);
            normal = -normal;
        }
        let n = normal.norm();
        let normal = if n > 0.0 { normal / n } else { normal };
        Face {
            verts,
            normal,
            offset: normal.dot(&pts[verts[0]].coords),
            alive: true,
        }
    }

    #[inline]
    fn sees(&self, p: &Point3<f64>, eps: f64) -> bool {
        self.normal.dot(&p.coords) - self.offset > eps
    }
}

/// Triangulated convex hull: facet index triplets wound outward.
#[derive(Debug, Clone)]
pub struct ConvexHull {
    pub facets: Vec<[usize; 3]>,
    /// Sorted indices of points lying on the hull surface as facet corners.
    pub vertices: Vec<usize>,
}

pub fn convex_hull(pts: &[Point3<f64>]) -> Result<ConvexHull, HullError> {
    if pts.len() < 4 {
        return Err(HullError::TooFewPoints(pts.len()));
    }
    let scale = pts
        .iter()
        .flat_map(|p| p.coords.iter().copied())
        .fold(1.0f64, |m, v| m.max(v.abs()));
    let eps = 1e-9 * scale;

    let seed = initial_tetrahedron(pts, eps).ok_or(HullError::Degenerate)?;
    let interior = Point3::from(
        (pts[seed[0]].coords + pts[seed[1]].coords + pts[seed[2]].coords + pts[seed[3]].coords)
            / 4.0,
    );

    let mut faces = vec![
        Face::new([seed[0], seed[1], seed[2]], pts, &interior),
        Face::new([seed[0], seed[1], seed[3]], pts, &interior),
        Face::new([seed[0], seed[2], seed[3]], pts, &interior),
        Face::new([seed[1], seed[2], seed[3]], pts, &interior),
    ];

    for (idx, p) in pts.iter().enumerate() {
        if seed.contains(&idx) {
            continue;
        }
        let visible: Vec<usize> = faces
            .iter()
            .enumerate()
            .filter(|(_, f)| f.alive && f.sees(p, eps))
            .map(|(i, _)| i)
            .collect();
        if visible.is_empty() {
            continue;
        }
        // Horizon edges appear in exactly one visible face.
        let mut edge_count: std::collections::BTreeMap<(usize, usize), ((usize, usize), usize)> =
            Default::default();
        for &fi in &visible {
            let v = faces[fi].verts;
            for k in 0..3 {
                let (a, b) = (v[k], v[(k + 1) % 3]);
                let key = (a.min(b), a.max(b));
                edge_count
                    .entry(key)
                    .and_modify(|e| e.1 += 1)
                    .or_insert(((a, b), 1));
            }
        }
        for &fi in &visible {
            faces[fi].alive = false;
        }
        for (_, (edge, count)) in edge_count {
            if count == 1 {
                // Keep the winding of the dying face so the new face points out.
                faces.push(Face::new([edge.0, edge.1, idx], pts, &interior));
            }
        }
    }

    let mut facets: Vec<[usize; 3]> = faces
        .into_iter()
        .filter(|f| f.alive)
        .map(|f| canonical_rotation(f.verts))
        .collect();
    facets.sort_unstable();
    let mut vertices: Vec<usize> = facets.iter().flatten().copied().collect();
    vertices.sort_unstable();
    vertices.dedup();
    Ok(ConvexHull { facets, vertices })
}

/// Rotate a triangle so the smallest index comes first, preserving winding.
fn canonical_rotation(v: [usize; 3]) -> [usize; 3] {
    let m = (0..3).min_by_key(|&i| v[i]).unwrap();
    [v[m], v[(m + 1) % 3], v[(m + 2) % 3]]
}

fn initial_tetrahedron(pts: &[Point3<f64>], eps: f64) -> Option<[usize; 4]> {
    // Two extreme points along x (ties broken by index order).
    let i0 = (0..pts.len()).min_by(|&a, &b| pts[a].x.total_cmp(&pts[b].x))?;
    let i1 = (0..pts.len())
        .filter(|&i| i != i0)
        .max_by(|&a, &b| {
            (pts[a] - pts[i0])
                .norm_squared()
                .total_cmp(&(pts[b] - pts[i0]).norm_squared())
        })?;
    if (pts[i1] - pts[i0]).norm() <= eps {
        return None;
    }
    let dir = (pts[i1] - pts[i0]).normalize();
    let i2 = (0..pts.len())
        .filter(|&i| i != i0 && i != i1)
        .max_by(|&a, &b| {
            let da = (pts[a] - pts[i0]) - dir * (pts[a] - pts[i0]).dot(&dir);
            let db = (pts[b] - pts[i0]) - dir * (pts[b] - pts[i0]).dot(&dir);
            da.norm_squared().total_cmp(&db.norm_squared())
        })?;
    let off = (pts[i2] - pts[i0]) - dir * (pts[i2] - pts[i0]).dot(&dir);
    if off.norm() <= eps {
        return None;
    }
    let normal = (pts[i1] - pts[i0]).cross(&(pts[i2] - pts[i0])).normalize();
    let i3 = (0..pts.len())
        .filter(|&i| i != i0 && i != i1 && i != i2)
        .max_by(|&a, &b| {
            normal
                .dot(&(pts[a] - pts[i0]))
                .abs()
                .total_cmp(&normal.dot(&(pts[b] - pts[i0])).abs())
        })?;
    if normal.dot(&(pts[i3] - pts[i0])).abs() <= eps {
        return None;
    }
    Some([i0, i1, i2, i3])
}
