//! Frontier meshes: extraction from polytopes and deletion of frontiers
//! swallowed by newer free space.

use crate::kdtree::KdTree;
use crate::meshtable::MeshTable;
use crate::starconvex::{PolytopeId, StarPolytope, VertexTag};
use nalgebra::{Point3, Vector3};
use std::collections::BTreeMap;

pub type FrontierId = u64;

/// A polytope triangle bordering unknown space.
#[derive(Debug, Clone)]
pub struct FrontierMesh {
    pub id: FrontierId,
    pub polytope_id: PolytopeId,
    pub center: Point3<f64>,
    /// Unit normal oriented toward the observing position.
    pub normal: Vector3<f64>,
    pub vertices: [Point3<f64>; 3],
}

/// Meshes with at least one free-tagged vertex; all-obstacle meshes border
/// real surfaces, not unknown space.
pub fn extract_frontiers(
    poly: &StarPolytope,
    next_id: &mut impl FnMut() -> FrontierId,
) -> Vec<FrontierMesh> {
    let mut out = Vec::new();
    for mesh in &poly.meshes {
        let tags = mesh.map(|vi| poly.vertices[vi as usize].1);
        if tags.iter().all(|&t| t == VertexTag::Obs) {
            continue;
        }
        let verts = mesh.map(|vi| poly.vertices[vi as usize].0);
        let center = poly.mesh_center(mesh);
        let mut normal = (verts[1] - verts[0]).cross(&(verts[2] - verts[0]));
        let n = normal.norm();
        if n < 1e-12 {
            continue; // degenerate sliver
        }
        normal /= n;
        if (poly.origin - center).dot(&normal) < 0.0 {
            normal = -normal;
        }
        out.push(FrontierMesh {
            id: next_id(),
            polytope_id: poly.id,
            center,
            normal,
            vertices: verts,
        });
    }
    out
}

/// Closest distance from a point to a filled triangle.
pub fn point_triangle_distance(p: &Point3<f64>, tri: &[Point3<f64>; 3]) -> f64 {
    // Closest-point-on-triangle by Voronoi region classification.
    let (a, b, c) = (tri[0], tri[1], tri[2]);
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return (p - a).norm();
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return (p - b).norm();
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (p - (a + ab * v)).norm();
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return (p - c).norm();
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (p - (a + ac * w)).norm();
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (p - (b + (c - b) * w)).norm();
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    (p - (a + ab * v + ac * w)).norm()
}

/// One all-obstacle triangle of a polytope: known real surface.
#[derive(Debug, Clone)]
struct SurfTri {
    verts: [Point3<f64>; 3],
    center: Point3<f64>,
    radius: f64,
}

fn surface_triangles(poly: &StarPolytope) -> Vec<SurfTri> {
    let mut out = Vec::new();
    for mesh in &poly.meshes {
        if mesh
            .iter()
            .any(|&vi| poly.vertices[vi as usize].1 != VertexTag::Obs)
        {
            continue;
        }
        let verts = mesh.map(|vi| poly.vertices[vi as usize].0);
        let center = poly.mesh_center(mesh);
        let radius = verts
            .iter()
            .map(|v| (v - center).norm())
            .fold(0.0, f64::max);
        out.push(SurfTri {
            verts,
            center,
            radius,
        });
    }
    out
}

/// Polytopes plus their MeshTables, surface triangles, and a KD-tree over
/// origins.
#[derive(Debug, Clone, Default)]
pub struct PolytopeIndex {
    entries: BTreeMap<PolytopeId, (StarPolytope, MeshTable, Vec<SurfTri>)>,
    tree: KdTree,
    max_reach: f64,
}

impl PolytopeIndex {
    pub fn insert(&mut self, poly: StarPolytope, cell_deg: f64) {
        let table = MeshTable::build(&poly, cell_deg);
        let surf = surface_triangles(&poly);
        self.max_reach = self.max_reach.max(table.reach);
        self.entries.insert(poly.id, (poly, table, surf));
        self.rebuild_tree();
    }

    pub fn insert_bulk(&mut self, polys: impl IntoIterator<Item = StarPolytope>, cell_deg: f64) {
        for poly in polys {
            let table = MeshTable::build(&poly, cell_deg);
            let surf = surface_triangles(&poly);
            self.max_reach = self.max_reach.max(table.reach);
            self.entries.insert(poly.id, (poly, table, surf));
        }
        self.rebuild_tree();
    }

    fn rebuild_tree(&mut self) {
        self.tree = KdTree::build(self.entries.iter().map(|(&id, (p, _, _))| (id, p.origin)));
    }

    pub fn get(&self, id: PolytopeId) -> Option<&StarPolytope> {
        self.entries.get(&id).map(|(p, _, _)| p)
    }

    pub fn contains_id(&self, id: PolytopeId) -> bool {
        self.entries.contains_key(&id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &StarPolytope> {
        self.entries.values().map(|(p, _, _)| p)
    }

    /// Whether `p` lies inside the polytope with this id.
    pub fn contains_point_in(&self, id: PolytopeId, p: &Point3<f64>, eps: f64) -> bool {
        match self.entries.get(&id) {
            Some((poly, table, _)) => {
                (p - poly.origin).norm() <= table.reach + eps && table.contains(poly, p, eps)
            }
            None => false,
        }
    }

    /// Whether `p` lies inside some polytope, optionally skipping one id.
    /// Uses the origin KD-tree to restrict candidates: a polytope cannot
    /// contain points farther from its origin than its farthest vertex.
    pub fn contains_point(&self, p: &Point3<f64>, skip: Option<PolytopeId>, eps: f64) -> bool {
        for id in self.tree.radius_search(p, self.max_reach + eps) {
            if skip == Some(id) {
                continue;
            }
            let (poly, table, _) = &self.entries[&id];
            if (p - poly.origin).norm() > table.reach + eps {
                continue;
            }
            if table.contains(poly, p, eps) {
                return true;
            }
        }
        false
    }

    /// Whether `p` lies within `dist` of a known real surface: an
    /// all-obstacle triangle of the polytope with id `id`.
    pub fn near_surface_of(&self, id: PolytopeId, p: &Point3<f64>, dist: f64) -> bool {
        match self.entries.get(&id) {
            Some((poly, table, surf)) => {
                (p - poly.origin).norm() <= table.reach + dist
                    && surf.iter().any(|t| {
                        (p - t.center).norm() <= dist + t.radius
                            && point_triangle_distance(p, &t.verts) <= dist
                    })
            }
            None => false,
        }
    }

    /// Whether `p` lies within `dist` of any polytope's known real surface.
    pub fn near_surface(&self, p: &Point3<f64>, dist: f64) -> bool {
        self.tree
            .radius_search(p, self.max_reach + dist)
            .into_iter()
            .any(|id| self.near_surface_of(id, p, dist))
    }
}

/// Contact tolerance for the staleness center test.
pub const STALE_CONTACT_EPS: f64 = 0.05;
/// How far past the face the unknown-side probe reaches. Half an occupancy
/// voxel: unknown pockets thinner than that are not explorable targets.
pub const STALE_PROBE_DEPTH: f64 = 0.5;

/// Point half a voxel past the face on its unknown side. The stored normal
/// faces the observer, so the unknown side is the opposite direction.
pub fn stale_probe(f: &FrontierMesh) -> Point3<f64> {
    f.center - f.normal * STALE_PROBE_DEPTH
}

/// A frontier is stale when it no longer borders explorable unknown space:
/// its center sits inside a non-parent polytope, or the point just past the
/// face on the unknown side is already covered (by any polytope, the parent
/// included, which retires sub-voxel creases), or that point sits against a
/// known real surface (the unknown behind the face is a sub-voxel pocket in
/// front of a wall). Probing directionally instead of inflating the center
/// test keeps two near-coincident observations from retiring each other's
/// entire boundary.
pub fn is_stale(f: &FrontierMesh, index: &PolytopeIndex) -> bool {
    let probe = stale_probe(f);
    index.contains_point(&f.center, Some(f.polytope_id), STALE_CONTACT_EPS)
        || index.contains_point(&probe, None, STALE_CONTACT_EPS)
        || index.near_surface(&probe, STALE_PROBE_DEPTH)
}

/// Split frontiers into kept and stale (see [`is_stale`]).
pub fn delete_stale(
    frontiers: Vec<FrontierMesh>,
    index: &PolytopeIndex,
) -> (Vec<FrontierMesh>, Vec<FrontierMesh>) {
    let mut kept = Vec::with_capacity(frontiers.len());
    let mut deleted = Vec::new();
    for f in frontiers {
        if is_stale(&f, index) {
            deleted.push(f);
        } else {
            kept.push(f);
        }
    }
    (kept, deleted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::PolytopeParams;
    use crate::starconvex::{build_polytope, sample_frame, SamplePointSets};
    use crate::world::{RobotState, VoxelWorld};
    use std::f64::consts::TAU;

    fn robot_at(pos: Point3<f64>) -> RobotState {
        RobotState {
            id: 0,
            position: pos,
            yaw: 0.0,
            v_max: 1.0,
            sensor_range: 10.0,
            fov: (TAU, 0.25),
            comm_range: 3.0,
        }
    }

    fn frame_polytope(world: &VoxelWorld, pos: Point3<f64>, id: PolytopeId) -> StarPolytope {
        let robot = robot_at(pos);
        let samples = sample_frame(world, &robot, &PolytopeParams::default()).unwrap();
        build_polytope(&samples, &pos, 2.0 * robot.sensor_range, id).unwrap()
    }

    fn seq() -> impl FnMut() -> FrontierId {
        let mut n = 0;
        move || {
            n += 1;
            n
        }
    }

    #[test]
    fn point_triangle_distance_matches_dense_sampling() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..40 {
            let v = |r: &mut rand_chacha::ChaCha8Rng| {
                Point3::new(
                    r.gen_range(-3.0..3.0),
                    r.gen_range(-3.0..3.0),
                    r.gen_range(-3.0..3.0),
                )
            };
            let tri = [v(&mut rng), v(&mut rng), v(&mut rng)];
            let p = v(&mut rng);
            // Oracle: dense barycentric sampling over the triangle.
            let mut best = f64::INFINITY;
            let n = 120;
            for i in 0..=n {
                for j in 0..=(n - i) {
                    let a = i as f64 / n as f64;
                    let b = j as f64 / n as f64;
                    let q = Point3::from(
                        tri[0].coords * (1.0 - a - b) + tri[1].coords * a + tri[2].coords * b,
                    );
                    best = best.min((p - q).norm());
                }
            }
            let got = point_triangle_distance(&p, &tri);
            assert!(
                (got - best).abs() < 2e-2 && got <= best + 1e-9,
                "got {got}, sampled {best}"
            );
        }
    }

    #[test]
    fn enclosed_robot_yields_no_frontiers() {
        // All-obs polytope built by hand: every sample is an obstacle hit.
        let origin = Point3::origin();
        let mut samples = SamplePointSets::default();
        samples.free.push(Point3::new(0.0, 0.0, 1.0)); // sampler needs one free
        for i in 0..12 {
            let az = TAU * i as f64 / 12.0;
            samples.obs.push(Point3::new(az.cos(), az.sin(), 0.2));
            samples.obs.push(Point3::new(az.cos(), az.sin(), -0.7));
        }
        samples.obs.push(Point3::new(0.0, 0.0, -1.0));
        let poly = build_polytope(&samples, &origin, 5.0, 1).unwrap();
        let mut next = seq();
        let frontiers = extract_frontiers(&poly, &mut next);
        // Only meshes touching the single free vertex survive.
        for f in &frontiers {
            assert!(f
                .vertices
                .iter()
                .any(|v| (v - Point3::new(0.0, 0.0, 1.0)).norm() < 1e-9));
        }
    }

    #[test]
    fn empty_world_every_mesh_is_frontier() {
        let world = VoxelWorld::new_free([60, 60, 6], 1.0);
        let poly = frame_polytope(&world, Point3::new(30.0, 30.0, 3.0), 1);
        let mut next = seq();
        let frontiers = extract_frontiers(&poly, &mut next);
        assert_eq!(frontiers.len(), poly.meshes.len());
    }

    #[test]
    fn frontier_normals_face_the_robot() {
        let mut world = VoxelWorld::new_free([60, 60, 6], 0.5);
        world.fill_box(Point3::new(20.0, 0.0, 0.0), Point3::new(20.4, 29.9, 2.9));
        let pos = Point3::new(15.0, 15.0, 1.5);
        let poly = frame_polytope(&world, pos, 1);
        let mut next = seq();
        let frontiers = extract_frontiers(&poly, &mut next);
        assert!(!frontiers.is_empty());
        for f in &frontiers {
            assert!((pos - f.center).dot(&f.normal) > 0.0);
        }
    }

    #[test]
    fn own_frontiers_survive_single_polytope() {
        let world = VoxelWorld::new_free([60, 60, 6], 1.0);
        let poly = frame_polytope(&world, Point3::new(30.0, 30.0, 3.0), 1);
        let mut next = seq();
        let frontiers = extract_frontiers(&poly, &mut next);
        let n = frontiers.len();
        let mut index = PolytopeIndex::default();
        index.insert(poly, 2.0);
        let (kept, deleted) = delete_stale(frontiers, &index);
        assert_eq!(kept.len(), n);
        assert!(deleted.is_empty());
    }

    #[test]
    fn engulfing_polytope_deletes_frontier() {
        // Second frame overlapping the first: frontiers of frame 1 whose
        // centers sit inside frame 2 must die. Oracle: brute force over all
        // polytopes without the KD-tree.
        let world = VoxelWorld::new_free([80, 80, 6], 1.0);
        let p1 = frame_polytope(&world, Point3::new(30.0, 40.0, 3.0), 1);
        let p2 = frame_polytope(&world, Point3::new(35.0, 40.0, 3.0), 2);
        let mut next = seq();
        let frontiers = extract_frontiers(&p1, &mut next);
        // Oracle: brute-force containment and surface distance, no KD-tree
        // or mesh table.
        let brute_surf = |poly: &StarPolytope, p: &Point3<f64>| {
            poly.meshes.iter().any(|m| {
                m.iter().all(|&vi| poly.vertices[vi as usize].1 == VertexTag::Obs)
                    && point_triangle_distance(p, &m.map(|vi| poly.vertices[vi as usize].0))
                        <= STALE_PROBE_DEPTH
            })
        };
        let brute: Vec<bool> = frontiers
            .iter()
            .map(|f| {
                let probe = stale_probe(f);
                p2.contains_point_brute(&f.center, STALE_CONTACT_EPS)
                    || p1.contains_point_brute(&probe, STALE_CONTACT_EPS)
                    || p2.contains_point_brute(&probe, STALE_CONTACT_EPS)
                    || brute_surf(&p1, &probe)
                    || brute_surf(&p2, &probe)
            })
            .collect();
        assert!(brute.iter().any(|&b| b), "fixture should overlap");
        let mut index = PolytopeIndex::default();
        index.insert_bulk([p1, p2], 2.0);
        let (kept, deleted) = delete_stale(frontiers, &index);
        assert_eq!(deleted.len(), brute.iter().filter(|&&b| b).count());
        for f in &kept {
            assert!(!index.contains_point(&f.center, Some(f.polytope_id), STALE_CONTACT_EPS));
        }
    }

    #[test]
    fn disjoint_polytopes_no_deletions() {
        let world = VoxelWorld::new_free([200, 60, 6], 1.0);
        let p1 = frame_polytope(&world, Point3::new(20.0, 30.0, 3.0), 1);
        let p2 = frame_polytope(&world, Point3::new(170.0, 30.0, 3.0), 2);
        let mut next = seq();
        let mut frontiers = extract_frontiers(&p1, &mut next);
        frontiers.extend(extract_frontiers(&p2, &mut next));
        let n = frontiers.len();
        let mut index = PolytopeIndex::default();
        index.insert_bulk([p1, p2], 2.0);
        let (kept, _) = delete_stale(frontiers, &index);
        assert_eq!(kept.len(), n);
    }
}
