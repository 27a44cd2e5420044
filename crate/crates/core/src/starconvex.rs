//! Star-convex free-space polytopes: cylindrical frame sampling, sphere
//! flipping, and convex-hull inversion.

use crate::config::PolytopeParams;
use crate::hull::{convex_hull, HullError};
use crate::world::{cast_ray, RayHit, RobotState, VoxelWorld, WorldError};
use nalgebra::{Point3, Vector3};
use thiserror::Error;

pub type PolytopeId = u64;

#[derive(Debug, Error)]
pub enum StarError {
    #[error("flip of a point coincident with the origin is undefined")]
    FlipAtOrigin,
    #[error("frame produced no free samples (robot enclosed)")]
    EmptyFrame,
    #[error("degenerate hull for frame {frame}: {source}")]
    DegenerateHull { frame: PolytopeId, source: HullError },
    #[error(transparent)]
    World(#[from] WorldError),
}

/// Which ray outcome produced a sample point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VertexTag {
    Free,
    Obs,
}

use serde::{Deserialize, Serialize};

/// Sample points of one sensor frame.
#[derive(Debug, Clone, Default)]
pub struct SamplePointSets {
    pub free: Vec<Point3<f64>>,
    pub obs: Vec<Point3<f64>>,
}

impl SamplePointSets {
    pub fn star_points(&self) -> impl Iterator<Item = (Point3<f64>, VertexTag)> + '_ {
        self.free
            .iter()
            .map(|p| (*p, VertexTag::Free))
            .chain(self.obs.iter().map(|p| (*p, VertexTag::Obs)))
    }

    pub fn len(&self) -> usize {
        self.free.len() + self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One sensor-frame free-space region: a triangulated star-shaped mesh
/// about `origin`.
#[derive(Debug, Clone)]
pub struct StarPolytope {
    pub id: PolytopeId,
    pub origin: Point3<f64>,
    pub flip_radius: f64,
    pub vertices: Vec<(Point3<f64>, VertexTag)>,
    /// Triangles as vertex-index triplets.
    pub meshes: Vec<[u32; 3]>,
}

/// Sphere mapping: distance d from the origin maps to 2r - d, direction
/// preserved.
pub fn flip(p: &Point3<f64>, origin: &Point3<f64>, r: f64) -> Result<Point3<f64>, StarError> {
    let v: Vector3<f64> = p - origin;
    let d = v.norm();
    if d == 0.0 {
        return Err(StarError::FlipAtOrigin);
    }
    Ok(origin + v * ((2.0 * r - d) / d))
}

/// Uniform cylindrical-grid directions within the robot's fov, each ray cast
/// out to the sensor range.
pub fn sample_frame(
    world: &VoxelWorld,
    robot: &RobotState,
    params: &PolytopeParams,
) -> Result<SamplePointSets, StarError> {
    let mut sets = SamplePointSets::default();
    let full_circle = robot.fov.0 >= std::f64::consts::TAU - 1e-9;
    let az_step = params.sample_azimuth_deg.to_radians();
    let n_az = if full_circle {
        (std::f64::consts::TAU / az_step).round() as usize
    } else {
        ((robot.fov.0 / az_step).round() as usize).max(1)
    };
    let half_v = (robot.fov.1 / 2.0).tan();

    for ring in 0..params.sample_rings {
        // Ring height fraction in (-1, 1), symmetric about the sensor plane.
        let frac = if params.sample_rings == 1 {
            0.0
        } else {
            2.0 * (ring as f64 + 0.5) / params.sample_rings as f64 - 1.0
        };
        let dz = frac * half_v;
        for k in 0..n_az {
            let az = if full_circle {
                k as f64 * az_step
            } else {
                robot.yaw - robot.fov.0 / 2.0 + (k as f64 + 0.5) * (robot.fov.0 / n_az as f64)
            };
            let dir = Vector3::new(az.cos(), az.sin(), dz).normalize();
            let target = robot.position + dir * robot.sensor_range;
            match cast_ray(world, &robot.position, &target)? {
                RayHit::Unobstructed => sets.free.push(target),
                RayHit::Hit { point, .. } => sets.obs.push(point),
            }
        }
    }
    if sets.free.is_empty() {
        return Err(StarError::EmptyFrame);
    }
    Ok(sets)
}

/// Drop mixed-tag meshes whose centers the sensor cannot actually see.
/// Hull chords can span occluded obstacle corners and claim volume behind
/// them; such faces are neither free-space boundary nor real surface. The
/// test point is pulled back toward the origin so faces legitimately flush
/// against obstacle cells are not discarded. All-obstacle meshes are kept:
/// their centers sit inside hit cells by construction.
pub fn drop_occluded_meshes(
    poly: &mut StarPolytope,
    retract: f64,
    visible: impl Fn(&Point3<f64>) -> bool,
) {
    let keep: Vec<bool> = poly
        .meshes
        .iter()
        .map(|m| {
            let tags = m.map(|vi| poly.vertices[vi as usize].1);
            if tags.iter().all(|&t| t == VertexTag::Obs) {
                return true;
            }
            let c = poly.mesh_center(m);
            let d = (c - poly.origin).norm();
            if d <= retract {
                return true;
            }
            let probe = poly.origin + (c - poly.origin) * ((d - retract) / d);
            visible(&probe)
        })
        .collect();
    let mut it = keep.into_iter();
    poly.meshes.retain(|_| it.next().unwrap());
}

/// Flip the samples, hull them, and invert the hull back into a star-shaped
/// polytope about `origin`.
pub fn build_polytope(
    samples: &SamplePointSets,
    origin: &Point3<f64>,
    flip_radius: f64,
    id: PolytopeId,
) -> Result<StarPolytope, StarError> {
    let tagged: Vec<(Point3<f64>, VertexTag)> = samples.star_points().collect();
    let mut flipped = Vec::with_capacity(tagged.len());
    for (p, _) in &tagged {
        flipped.push(flip(p, origin, flip_radius)?);
    }
    let hull = convex_hull(&flipped)
        .map_err(|source| StarError::DegenerateHull { frame: id, source })?;

    // Compact to hull vertices only; remap facet indices.
    let mut remap = vec![u32::MAX; tagged.len()];
    let mut vertices = Vec::with_capacity(hull.vertices.len());
    for (new_idx, &old_idx) in hull.vertices.iter().enumerate() {
        remap[old_idx] = new_idx as u32;
        vertices.push(tagged[old_idx]);
    }
    let meshes = hull
        .facets
        .iter()
        .map(|f| [remap[f[0]], remap[f[1]], remap[f[2]]])
        .collect();
    Ok(StarPolytope {
        id,
        origin: *origin,
        flip_radius,
        vertices,
        meshes,
    })
}

/// A new polytope is due once the robot has moved `gen_spacing` from the
/// previous generation point (closed threshold); always due at run start.
pub fn should_generate(
    position: &Point3<f64>,
    last_gen_position: Option<&Point3<f64>>,
    gen_spacing: f64,
) -> bool {
    match last_gen_position {
        None => true,
        Some(last) => (position - last).norm() >= gen_spacing,
    }
}

impl StarPolytope {
    /// Largest vertex distance from the origin.
    pub fn max_radius(&self) -> f64 {
        self.vertices
            .iter()
            .map(|(v, _)| (v - self.origin).norm())
            .fold(0.0, f64::max)
    }

    /// Exhaustive membership check: the point is inside iff it lies in the
    /// tetrahedron spanned by the origin and some mesh. `eps` inflates each
    /// tetrahedron; test oracles pass 0.
    pub fn contains_point_brute(&self, p: &Point3<f64>, eps: f64) -> bool {
        self.meshes
            .iter()
            .any(|m| self.tetra_contains(m, p, eps))
    }

    /// Membership in the tetrahedron (origin, v0, v1, v2) of one mesh,
    /// via barycentric coordinates with tolerance `eps` (meters, scaled by
    /// the local tetra size through the solve).
    pub fn tetra_contains(&self, mesh: &[u32; 3], p: &Point3<f64>, eps: f64) -> bool {
        let a = self.vertices[mesh[0] as usize].0 - self.origin;
        let b = self.vertices[mesh[1] as usize].0 - self.origin;
        let c = self.vertices[mesh[2] as usize].0 - self.origin;
        let m = nalgebra::Matrix3::from_columns(&[a, b, c]);
        let Some(inv) = m.try_inverse() else {
            return false;
        };
        let w = inv * (p - self.origin);
        // Normalize the tolerance to barycentric scale using the tetra reach.
        let scale = a.norm().max(b.norm()).max(c.norm()).max(1e-12);
        let e = eps / scale;
        w.x >= -e && w.y >= -e && w.z >= -e && (w.x + w.y + w.z) <= 1.0 + e
    }

    /// Centroid of one mesh triangle.
    pub fn mesh_center(&self, mesh: &[u32; 3]) -> Point3<f64> {
        let a = self.vertices[mesh[0] as usize].0;
        let b = self.vertices[mesh[1] as usize].0;
        let c = self.vertices[mesh[2] as usize].0;
        Point3::from((a.coords + b.coords + c.coords) / 3.0)
    }

    /// Wire encoding: header (id u64, origin 3xf32, flip radius f32,
    /// vertex count u32, mesh count u32), vertices (3xf32 + tag byte),
    /// meshes (3xu32). Byte length is the bandwidth charge.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(28 + self.vertices.len() * 13 + self.meshes.len() * 12);
        out.extend_from_slice(&self.id.to_le_bytes());
        for v in [self.origin.x, self.origin.y, self.origin.z] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out.extend_from_slice(&(self.flip_radius as f32).to_le_bytes());
        out.extend_from_slice(&(self.vertices.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.meshes.len() as u32).to_le_bytes());
        for (v, tag) in &self.vertices {
            for c in [v.x, v.y, v.z] {
                out.extend_from_slice(&(c as f32).to_le_bytes());
            }
            out.push(match tag {
                VertexTag::Free => 0,
                VertexTag::Obs => 1,
            });
        }
        for m in &self.meshes {
            for &i in m {
                out.extend_from_slice(&i.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(buf: &[u8]) -> Option<(Self, usize)> {
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize| -> Option<&[u8]> {
            let s = buf.get(*pos..*pos + n)?;
            *pos += n;
            Some(s)
        };
        let id = u64::from_le_bytes(take(&mut pos, 8)?.try_into().ok()?);
        let f32_at = |pos: &mut usize| -> Option<f64> {
            Some(f32::from_le_bytes(take(pos, 4)?.try_into().ok()?) as f64)
        };
        let origin = Point3::new(f32_at(&mut pos)?, f32_at(&mut pos)?, f32_at(&mut pos)?);
        let flip_radius = f32_at(&mut pos)?;
        let nv = u32::from_le_bytes(take(&mut pos, 4)?.try_into().ok()?) as usize;
        let nm = u32::from_le_bytes(take(&mut pos, 4)?.try_into().ok()?) as usize;
        let mut vertices = Vec::with_capacity(nv);
        for _ in 0..nv {
            let f32_at = |pos: &mut usize| -> Option<f64> {
                Some(f32::from_le_bytes(take(pos, 4)?.try_into().ok()?) as f64)
            };
            let p = Point3::new(f32_at(&mut pos)?, f32_at(&mut pos)?, f32_at(&mut pos)?);
            let tag = match take(&mut pos, 1)?[0] {
                0 => VertexTag::Free,
                _ => VertexTag::Obs,
            };
            vertices.push((p, tag));
        }
        let mut meshes = Vec::with_capacity(nm);
        for _ in 0..nm {
            let mut idx = [0u32; 3];
            for v in &mut idx {
                *v = u32::from_le_bytes(take(&mut pos, 4)?.try_into().ok()?);
            }
            meshes.push(idx);
        }
        Some((
            Self {
                id,
                origin,
                flip_radius,
                vertices,
                meshes,
            },
            pos,
        ))
    }
}
