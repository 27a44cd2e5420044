//! Super frontier information: frontier clusters, per-cluster viewpoints,
//! and super-viewpoints, plus the wire encoding charged to the bandwidth
//! ledger.

use crate::config::SfiParams;
use crate::frontier::{FrontierId, FrontierMesh};
use nalgebra::{Point3, Vector3};

pub type ClusterId = u64;
pub type SvpId = u64;

/// Group of similar frontier meshes.
#[derive(Debug, Clone)]
pub struct FrontierCluster {
    pub id: ClusterId,
    pub members: Vec<FrontierId>,
    pub center: Point3<f64>,
    pub normal: Vector3<f64>,
}

impl FrontierCluster {
    pub fn from_members(id: ClusterId, meshes: &[&FrontierMesh]) -> Self {
        assert!(!meshes.is_empty());
        let mut center = Vector3::zeros();
        let mut normal = Vector3::zeros();
        for m in meshes {
            center += m.center.coords;
            normal += m.normal;
        }
        center /= meshes.len() as f64;
        let n = normal.norm();
        let normal = if n > 1e-12 {
            normal / n
        } else {
            // Normals cancel; fall back to the first member's.
            meshes[0].normal
        };
        let mut members: Vec<FrontierId> = meshes.iter().map(|m| m.id).collect();
        members.sort_unstable();
        FrontierCluster {
            id,
            members,
            center: Point3::from(center),
            normal,
        }
    }
}

/// Best observation pose for one cluster.
#[derive(Debug, Clone)]
pub struct Viewpoint {
    pub cluster_id: ClusterId,
    pub position: Point3<f64>,
}

/// Agglomerated viewpoints within a shared sphere.
#[derive(Debug, Clone)]
pub struct SuperViewpoint {
    pub id: SvpId,
    pub position: Point3<f64>,
    /// Member cluster ids, sorted.
    pub members: Vec<ClusterId>,
}

/// Candidate poses around the cluster, scored by angular error to the
/// cluster normal and range error to the preferred distance; the minimum
/// scoring candidate inside known free space wins. Returns None when no
/// candidate is free (cluster flagged viewpoint-less until space grows).
pub fn gen_viewpoint(
    fc: &FrontierCluster,
    in_free_space: &dyn Fn(&Point3<f64>) -> bool,
    params: &SfiParams,
    sensor_range: f64,
) -> Option<Viewpoint> {
    let r_opt = params.r_opt_factor * sensor_range;
    let (u, v) = orthobasis(&fc.normal);

    let mut best: Option<(f64, Point3<f64>)> = None;
    let polar_steps = [0.0f64, 0.25, 0.5, 0.75, 1.0, 1.25];
    let radii = [1.0f64, 0.75, 1.25, 0.5, 1.5];
    for &polar in &polar_steps {
        let n_az = if polar == 0.0 { 1 } else { 12 };
        for az_i in 0..n_az {
            let az = std::f64::consts::TAU * az_i as f64 / n_az as f64;
            let dir = fc.normal * polar.cos() + (u * az.cos() + v * az.sin()) * polar.sin();
            for &rf in &radii {
                let r = rf * r_opt;
                let cand = fc.center + dir * r;
                if !in_free_space(&cand) {
                    continue;
                }
                let score = params.w_theta * polar + params.w_range * (r - r_opt).abs();
                if best.map_or(true, |(s, _)| score < s) {
                    best = Some((score, cand));
                }
            }
        }
    }
    // Cramped clusters can reject the whole lattice. Fall back to short
    // absolute offsets along the normal so the cluster still gets visited.
    if best.is_none() {
        for &off in &[0.5f64, 1.0, 0.25, 1.5, 2.0] {
            let cand = fc.center + fc.normal * off;
            if in_free_space(&cand) {
                best = Some((f64::INFINITY, cand));
                break;
            }
        }
    }
    best.map(|(_, position)| Viewpoint {
        cluster_id: fc.id,
        position,
    })
}

fn orthobasis(n: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let e = if n.x.abs() < 0.9 {
        Vector3::x()
    } else {
        Vector3::y()
    };
    let u = n.cross(&e).normalize();
    let v = n.cross(&u).normalize();
    (u, v)
}

/// Greedy agglomeration in cluster-id order. A viewpoint joins an existing
/// super-viewpoint when it is within `svp_radius` of its position and stays
/// within `2 * svp_radius` of every member; otherwise it seeds a new one.
pub fn gen_super_viewpoints(
    viewpoints: &[Viewpoint],
    svp_radius: f64,
    mut next_id: impl FnMut() -> SvpId,
) -> Vec<SuperViewpoint> {
    let mut order: Vec<usize> = (0..viewpoints.len()).collect();
    order.sort_by_key(|&i| viewpoints[i].cluster_id);

    struct Agg {
        id: SvpId,
        members: Vec<usize>,
        centroid: Point3<f64>,
    }
    let mut aggs: Vec<Agg> = Vec::new();
    for &vi in &order {
        let vp = &viewpoints[vi];
        let slot = aggs.iter().position(|a| {
            (vp.position - a.centroid).norm() <= svp_radius
                && a.members
                    .iter()
                    .all(|&m| (vp.position - viewpoints[m].position).norm() <= 2.0 * svp_radius)
        });
        match slot {
            Some(s) => {
                let a = &mut aggs[s];
                a.members.push(vi);
                let mut c = Vector3::zeros();
                for &m in &a.members {
                    c += viewpoints[m].position.coords;
                }
                a.centroid = Point3::from(c / a.members.len() as f64);
            }
            None => aggs.push(Agg {
                id: next_id(),
                members: vec![vi],
                centroid: vp.position,
            }),
        }
    }
    aggs.into_iter()
        .map(|a| {
            let mut members: Vec<ClusterId> =
                a.members.iter().map(|&m| viewpoints[m].cluster_id).collect();
            members.sort_unstable();
            SuperViewpoint {
                id: a.id,
                position: a.centroid,
                members,
            }
        })
        .collect()
}

/// Wire form of one cluster inside an SVP record.
#[derive(Debug, Clone, PartialEq)]
pub struct FcWire {
    pub center: Point3<f64>,
    pub normal: Vector3<f64>,
    pub viewpoint: Point3<f64>,
    pub mesh_ids: Vec<FrontierId>,
}

/// Wire form of the SFI: per SVP, its position and member clusters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SfiWire {
    pub svps: Vec<(Point3<f64>, Vec<FcWire>)>,
}

fn put_f32(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&(v as f32).to_le_bytes());
}

impl SfiWire {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&(self.svps.len() as u32).to_le_bytes());
        for (pos, fcs) in &self.svps {
            put_f32(&mut out, pos.x);
            put_f32(&mut out, pos.y);
            put_f32(&mut out, pos.z);
            out.extend_from_slice(&(fcs.len() as u32).to_le_bytes());
            for fc in fcs {
                for v in [
                    fc.center.x, fc.center.y, fc.center.z, fc.normal.x, fc.normal.y, fc.normal.z,
                    fc.viewpoint.x, fc.viewpoint.y, fc.viewpoint.z,
                ] {
                    put_f32(&mut out, v);
                }
                out.extend_from_slice(&(fc.mesh_ids.len() as u32).to_le_bytes());
                for &id in &fc.mesh_ids {
                    out.extend_from_slice(&id.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn decode(buf: &[u8], pos: &mut usize) -> Option<Self> {
        let take = |pos: &mut usize, n: usize| -> Option<&[u8]> {
            let s = buf.get(*pos..*pos + n)?;
            *pos += n;
            Some(s)
        };
        let f = |pos: &mut usize| -> Option<f64> {
            Some(f32::from_le_bytes(take(pos, 4)?.try_into().ok()?) as f64)
        };
        let n_svp = u32::from_le_bytes(take(pos, 4)?.try_into().ok()?) as usize;
        let mut svps = Vec::with_capacity(n_svp);
        for _ in 0..n_svp {
            let p = Point3::new(f(pos)?, f(pos)?, f(pos)?);
            let n_fc = u32::from_le_bytes(take(pos, 4)?.try_into().ok()?) as usize;
            let mut fcs = Vec::with_capacity(n_fc);
            for _ in 0..n_fc {
                let center = Point3::new(f(pos)?, f(pos)?, f(pos)?);
                let normal = Vector3::new(f(pos)?, f(pos)?, f(pos)?);
                let viewpoint = Point3::new(f(pos)?, f(pos)?, f(pos)?);
                let n_mesh = u32::from_le_bytes(take(pos, 4)?.try_into().ok()?) as usize;
                let mut mesh_ids = Vec::with_capacity(n_mesh);
                for _ in 0..n_mesh {
                    mesh_ids.push(u64::from_le_bytes(take(pos, 8)?.try_into().ok()?));
                }
                fcs.push(FcWire {
                    center,
                    normal,
                    viewpoint,
                    mesh_ids,
                });
            }
            svps.push((p, fcs));
        }
        Some(SfiWire { svps })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fc_at(id: ClusterId, center: Point3<f64>, normal: Vector3<f64>) -> FrontierCluster {
        FrontierCluster {
            id,
            members: vec![id],
            center,
            normal: normal.normalize(),
        }
    }

    #[test]
    fn viewpoint_prefers_on_axis_at_r_opt() {
        let params = SfiParams::default();
        let sensor_range = 10.0;
        let r_opt = params.r_opt_factor * sensor_range;
        let fc = fc_at(1, Point3::origin(), Vector3::x());
        let vp = gen_viewpoint(&fc, &|_| true, &params, sensor_range).unwrap();
        let expect = Point3::new(r_opt, 0.0, 0.0);
        assert!((vp.position - expect).norm() < 1e-9, "{:?}", vp.position);
    }

    #[test]
    fn viewpoint_range_ordering_on_axis() {
        // Only on-axis candidates free: the one nearest R_opt wins.
        let params = SfiParams::default();
        let sensor_range = 10.0;
        let r_opt = params.r_opt_factor * sensor_range;
        let fc = fc_at(1, Point3::origin(), Vector3::x());
        let free = |p: &Point3<f64>| -> bool {
            p.y.abs() < 1e-9
                && p.z.abs() < 1e-9
                && [0.5, 1.0, 2.0]
                    .iter()
                    .any(|&m| (p.x - m * r_opt).abs() < 1e-9)
        };
        let vp = gen_viewpoint(&fc, &free, &params, sensor_range).unwrap();
        assert!((vp.position.x - r_opt).abs() < 1e-9);
    }

    #[test]
    fn viewpoint_none_when_nothing_free() {
        let fc = fc_at(1, Point3::origin(), Vector3::x());
        assert!(gen_viewpoint(&fc, &|_| false, &SfiParams::default(), 10.0).is_none());
    }

    #[test]
    fn viewpoint_is_exhaustive_minimum() {
        // The selected score must beat every free candidate on a fixture
        // where free space is a half-space.
        let params = SfiParams::default();
        let sensor_range = 10.0;
        let r_opt = params.r_opt_factor * sensor_range;
        let fc = fc_at(1, Point3::new(1.0, 2.0, 0.5), Vector3::new(1.0, 1.0, 0.0));
        let free = |p: &Point3<f64>| p.y >= 2.5;
        let vp = gen_viewpoint(&fc, &free, &params, sensor_range).unwrap();
        let chosen_score = {
            let d = vp.position - fc.center;
            params.w_theta * d.normalize().dot(&fc.normal).clamp(-1.0, 1.0).acos()
                + params.w_range * (d.norm() - r_opt).abs()
        };
        // Rescan the same candidate lattice.
        let (u, v) = super::orthobasis(&fc.normal);
        for &polar in &[0.0f64, 0.25, 0.5, 0.75, 1.0, 1.25] {
            let n_az = if polar == 0.0 { 1 } else { 12 };
            for az_i in 0..n_az {
                let az = std::f64::consts::TAU * az_i as f64 / n_az as f64;
                let dir = fc.normal * polar.cos() + (u * az.cos() + v * az.sin()) * polar.sin();
                for &rf in &[1.0f64, 0.75, 1.25, 0.5, 1.5] {
                    let cand = fc.center + dir * (rf * r_opt);
                    if free(&cand) {
                        let s = params.w_theta * polar + params.w_range * (rf * r_opt - r_opt).abs();
                        assert!(chosen_score <= s + 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn single_viewpoint_single_svp() {
        let vps = vec![Viewpoint {
            cluster_id: 1,
            position: Point3::new(1.0, 2.0, 3.0),
        }];
        let mut n = 0;
        let svps = gen_super_viewpoints(&vps, 3.0, || {
            n += 1;
            n
        });
        assert_eq!(svps.len(), 1);
        assert_eq!(svps[0].position, Point3::new(1.0, 2.0, 3.0));
    }

    #[test]
    fn two_close_viewpoints_merge_at_midpoint() {
        let r = 3.0;
        let vps = vec![
            Viewpoint {
                cluster_id: 1,
                position: Point3::new(0.0, 0.0, 0.0),
            },
            Viewpoint {
                cluster_id: 2,
                position: Point3::new(r * 0.5, 0.0, 0.0),
            },
        ];
        let mut n = 0;
        let svps = gen_super_viewpoints(&vps, r, || {
            n += 1;
            n
        });
        assert_eq!(svps.len(), 1);
        assert!((svps[0].position - Point3::new(r * 0.25, 0.0, 0.0)).norm() < 1e-9);
        assert_eq!(svps[0].members, vec![1, 2]);
    }

    #[test]
    fn distant_viewpoints_stay_separate() {
        let r = 3.0;
        let vps: Vec<Viewpoint> = (0..3)
            .map(|i| Viewpoint {
                cluster_id: i as u64 + 1,
                position: Point3::new(10.0 * i as f64, 0.0, 0.0),
            })
            .collect();
        let mut n = 0;
        let svps = gen_super_viewpoints(&vps, r, || {
            n += 1;
            n
        });
        assert_eq!(svps.len(), 3);
    }

    #[test]
    fn svp_members_pairwise_within_two_radii() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let r = 3.0;
        let vps: Vec<Viewpoint> = (0..60)
            .map(|i| Viewpoint {
                cluster_id: i as u64,
                position: Point3::new(
                    rng.gen_range(0.0..30.0),
                    rng.gen_range(0.0..30.0),
                    rng.gen_range(0.0..3.0),
                ),
            })
            .collect();
        let mut n = 0;
        let svps = gen_super_viewpoints(&vps, r, || {
            n += 1;
            n
        });
        let pos_of = |c: ClusterId| vps.iter().find(|v| v.cluster_id == c).unwrap().position;
        for svp in &svps {
            for (i, &a) in svp.members.iter().enumerate() {
                for &b in &svp.members[i + 1..] {
                    assert!((pos_of(a) - pos_of(b)).norm() <= 2.0 * r + 1e-9);
                }
            }
        }
        // Every viewpoint lands in exactly one SVP.
        let total: usize = svps.iter().map(|s| s.members.len()).sum();
        assert_eq!(total, vps.len());
    }

    #[test]
    fn sfi_wire_roundtrip() {
        let wire = SfiWire {
            svps: vec![(
                Point3::new(1.0, 2.0, 0.5),
                vec![FcWire {
                    center: Point3::new(3.0, 2.0, 0.5),
                    normal: Vector3::new(0.0, 1.0, 0.0),
                    viewpoint: Point3::new(3.0, 4.0, 0.5),
                    mesh_ids: vec![42, 43, 99],
                }],
            )],
        };
        let bytes = wire.encode();
        let mut pos = 0;
        let back = SfiWire::decode(&bytes, &mut pos).unwrap();
        assert_eq!(pos, bytes.len());
        assert_eq!(back.svps[0].1[0].mesh_ids, vec![42, 43, 99]);
    }
}
