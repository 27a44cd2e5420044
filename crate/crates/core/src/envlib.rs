//! Per-robot environment library: polytopes, frontiers, clusters,
//! viewpoints, and super-viewpoints, with delta synchronization between
//! robots and commutative merging.
//!
//! Identifiers are globally unique without coordination. A polytope id
//! packs the observing robot in the high 32 bits and a per-robot sequence
//! below; a frontier id packs its polytope id above a per-polytope mesh
//! sequence. Frontier extraction is a pure function of the polytope, so
//! two robots holding the same polytope bytes derive identical frontier
//! ids, which is what makes merge order irrelevant.

use crate::cluster::cluster_frontiers;
use crate::config::Params;
use crate::frontier::{
    extract_frontiers, is_stale, stale_probe, FrontierId, FrontierMesh, PolytopeIndex,
    STALE_CONTACT_EPS, STALE_PROBE_DEPTH,
};
use crate::sfi::{
    gen_super_viewpoints, gen_viewpoint, ClusterId, FcWire, FrontierCluster, SfiWire, SuperViewpoint,
    SvpId, Viewpoint,
};
use crate::starconvex::{PolytopeId, StarPolytope};
use crate::world::RobotId;
use nalgebra::Point3;
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

const MESH_SEQ_BITS: u64 = 12;

pub fn polytope_id(robot: RobotId, seq: u64) -> PolytopeId {
    assert!(seq < 1 << 32);
    ((robot as u64) << 32) | seq
}

pub fn polytope_owner(id: PolytopeId) -> RobotId {
    (id >> 32) as RobotId
}

pub fn polytope_seq(id: PolytopeId) -> u64 {
    id & 0xFFFF_FFFF
}

fn frontier_id(poly: PolytopeId, mesh_seq: u64) -> FrontierId {
    assert!(mesh_seq < 1 << MESH_SEQ_BITS, "mesh count exceeds id space");
    (poly << MESH_SEQ_BITS) | mesh_seq
}

/// Highest polytope sequence seen per robot; what a peer already holds.
pub type Checkpoint = BTreeMap<RobotId, u64>;

#[derive(Debug, Error, PartialEq)]
pub enum MergeError {
    #[error("polytope id {0} exists with different content")]
    IdCollision(PolytopeId),
    #[error("malformed stream at byte {0}")]
    Malformed(usize),
}

#[derive(Debug, Default, Clone, PartialEq)]
pub struct MergeReport {
    pub new_polytopes: Vec<PolytopeId>,
    pub deleted_frontiers: Vec<FrontierId>,
    pub new_frontiers: usize,
}

#[derive(Debug, Clone, Default)]
pub struct EnvLibrary {
    pub owner: RobotId,
    pub index: PolytopeIndex,
    pub frontiers: BTreeMap<FrontierId, FrontierMesh>,
    pub clusters: BTreeMap<ClusterId, FrontierCluster>,
    /// Best observation pose per cluster; clusters without one are retried
    /// on the next refresh as free space grows.
    pub viewpoints: BTreeMap<ClusterId, Viewpoint>,
    pub svps: Vec<SuperViewpoint>,
    fc_of: BTreeMap<FrontierId, ClusterId>,
    next_poly_seq: u64,
    next_cluster_seq: u64,
    next_svp_seq: u64,
    /// Frontiers awaiting (re)clustering.
    dirty: BTreeSet<FrontierId>,
}

impl EnvLibrary {
    pub fn new(owner: RobotId) -> Self {
        EnvLibrary {
            owner,
            ..Default::default()
        }
    }

    pub fn alloc_polytope_id(&mut self) -> PolytopeId {
        self.next_poly_seq += 1;
        polytope_id(self.owner, self.next_poly_seq)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut cp = Checkpoint::new();
        for poly in self.index.iter() {
            let r = polytope_owner(poly.id);
            let s = polytope_seq(poly.id);
            let e = cp.entry(r).or_insert(0);
            *e = (*e).max(s);
        }
        cp
    }

    /// Insert one polytope (own observation or received), extract its
    /// frontiers, and retire frontiers swallowed by the grown free space.
    pub fn insert_polytope(
        &mut self,
        poly: StarPolytope,
        params: &Params,
    ) -> Result<MergeReport, MergeError> {
        self.insert_polytopes(vec![poly], params)
    }

    pub fn insert_polytopes(
        &mut self,
        polys: Vec<StarPolytope>,
        params: &Params,
    ) -> Result<MergeReport, MergeError> {
        let mut report = MergeReport::default();
        let mut fresh = Vec::new();
        for poly in polys {
            if let Some(existing) = self.index.get(poly.id) {
                if existing.encode() != poly.encode() {
                    return Err(MergeError::IdCollision(poly.id));
                }
                continue;
            }
            fresh.push(poly);
        }
        if fresh.is_empty() {
            return Ok(report);
        }
        for poly in &fresh {
            report.new_polytopes.push(poly.id);
            if polytope_owner(poly.id) == self.owner {
                self.next_poly_seq = self.next_poly_seq.max(polytope_seq(poly.id));
            }
            let mut seq = 0u64;
            let mut next = || {
                let id = frontier_id(poly.id, seq);
                seq += 1;
                id
            };
            for f in extract_frontiers(poly, &mut next) {
                report.new_frontiers += 1;
                self.dirty.insert(f.id);
                self.frontiers.insert(f.id, f);
            }
        }
        self.index
            .insert_bulk(fresh, params.sfi.meshtable_cell_deg);

        // Retire frontiers that stopped bordering explorable unknown space.
        // New frontiers are checked against everything; pre-existing ones
        // only against the polytopes added here, since the full check ran
        // when they were inserted and nothing else changed.
        let new_polys: BTreeSet<PolytopeId> = report.new_polytopes.iter().copied().collect();
        let mut doomed = Vec::new();
        for (&id, f) in &self.frontiers {
            let stale = if new_polys.contains(&f.polytope_id) {
                is_stale(f, &self.index)
            } else {
                let probe = stale_probe(f);
                new_polys.iter().any(|&pid| {
                    self.index
                        .contains_point_in(pid, &f.center, STALE_CONTACT_EPS)
                        || self.index.contains_point_in(pid, &probe, STALE_CONTACT_EPS)
                        || self.index.near_surface_of(pid, &probe, STALE_PROBE_DEPTH)
                })
            };
            if stale {
                doomed.push(id);
            }
        }
        for id in doomed {
            report.deleted_frontiers.push(id);
            self.frontiers.remove(&id);
            self.dirty.remove(&id);
            if let Some(cid) = self.fc_of.remove(&id) {
                self.invalidate_cluster(cid);
            }
        }
        Ok(report)
    }

    fn invalidate_cluster(&mut self, cid: ClusterId) {
        if let Some(fc) = self.clusters.remove(&cid) {
            self.viewpoints.remove(&cid);
            for m in fc.members {
                if self.frontiers.contains_key(&m) {
                    self.fc_of.remove(&m);
                    self.dirty.insert(m);
                }
            }
        }
    }

    /// Recluster dirty frontiers, regenerate their viewpoints, retry
    /// viewpoint-less clusters, and rebuild super-viewpoints. Ids of
    /// untouched clusters and of super-viewpoints with unchanged member
    /// sets are preserved.
    pub fn refresh_sfi(&mut self, params: &Params, sensor_range: f64) {
        if !self.dirty.is_empty() {
            let ids: Vec<FrontierId> = self.dirty.iter().copied().collect();
            let meshes: Vec<FrontierMesh> =
                ids.iter().map(|id| self.frontiers[id].clone()).collect();
            let groups = cluster_frontiers(&meshes, &params.sfi);
            for g in groups {
                self.next_cluster_seq += 1;
                let cid = ((self.owner as u64) << 32) | self.next_cluster_seq;
                let members: Vec<&FrontierMesh> = g.iter().map(|&i| &meshes[i]).collect();
                let fc = FrontierCluster::from_members(cid, &members);
                for &i in &g {
                    self.fc_of.insert(ids[i], cid);
                }
                self.clusters.insert(cid, fc);
            }
            self.dirty.clear();
        }

        // Viewpoints for clusters that lack one.
        let pending: Vec<ClusterId> = self
            .clusters
            .keys()
            .filter(|cid| !self.viewpoints.contains_key(cid))
            .copied()
            .collect();
        for cid in pending {
            let fc = &self.clusters[&cid];
            let free = |p: &Point3<f64>| self.index.contains_point(p, None, 0.0);
            if let Some(vp) = gen_viewpoint(fc, &free, &params.sfi, sensor_range) {
                self.viewpoints.insert(cid, vp);
            }
        }

        // Super-viewpoints, reusing ids for unchanged member sets.
        let old: BTreeMap<Vec<ClusterId>, SvpId> = self
            .svps
            .iter()
            .map(|s| (s.members.clone(), s.id))
            .collect();
        let vps: Vec<Viewpoint> = self.viewpoints.values().cloned().collect();
        let radius = params.sfi.svp_radius_factor * sensor_range;
        let mut fresh = gen_super_viewpoints(&vps, radius, || 0);
        for svp in &mut fresh {
            svp.id = match old.get(&svp.members) {
                Some(&id) => id,
                None => {
                    self.next_svp_seq += 1;
                    ((self.owner as u64) << 32) | self.next_svp_seq
                }
            };
        }
        fresh.sort_by_key(|s| s.id);
        self.svps = fresh;
    }

    /// Replace this library's contents with another's, keeping our
    /// identity. Used after a meeting: every member takes the host's
    /// merged state so cluster and SVP ids agree across the team. Our own
    /// id counters continue from what the adopted state already contains.
    pub fn adopt(&mut self, source: &EnvLibrary) {
        let owner = self.owner;
        let mut fresh = source.clone();
        fresh.owner = owner;
        fresh.next_poly_seq = fresh
            .index
            .iter()
            .filter(|p| polytope_owner(p.id) == owner)
            .map(|p| polytope_seq(p.id))
            .max()
            .unwrap_or(0);
        let own_seq = |id: u64| {
            if (id >> 32) as RobotId == owner {
                id & 0xFFFF_FFFF
            } else {
                0
            }
        };
        fresh.next_cluster_seq = source
            .clusters
            .keys()
            .map(|&c| own_seq(c))
            .max()
            .unwrap_or(0)
            .max(self.next_cluster_seq);
        fresh.next_svp_seq = source
            .svps
            .iter()
            .map(|s| own_seq(s.id))
            .max()
            .unwrap_or(0)
            .max(self.next_svp_seq);
        *self = fresh;
    }

    pub fn svp_position(&self, id: SvpId) -> Option<Point3<f64>> {
        self.svps.iter().find(|s| s.id == id).map(|s| s.position)
    }

    fn sfi_wire(&self) -> SfiWire {
        SfiWire {
            svps: self
                .svps
                .iter()
                .map(|svp| {
                    let fcs = svp
                        .members
                        .iter()
                        .map(|cid| {
                            let fc = &self.clusters[cid];
                            FcWire {
                                center: fc.center,
                                normal: fc.normal,
                                viewpoint: self.viewpoints[cid].position,
                                mesh_ids: fc
                                    .members
                                    .iter()
                                    .filter(|m| self.frontiers.contains_key(m))
                                    .copied()
                                    .collect(),
                            }
                        })
                        .collect();
                    (svp.position, fcs)
                })
                .collect(),
        }
    }

    /// Bytes to bring a peer at `since` up to date: polytopes the peer has
    /// not seen plus the current super frontier information. `None` (peer
    /// unknown) sends the full snapshot. Nothing new still produces the
    /// header and SFI, so callers can skip sending when only that remains.
    pub fn serialize(&self, since: Option<&Checkpoint>) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.owner.to_le_bytes());
        let delta: Vec<&StarPolytope> = self
            .index
            .iter()
            .filter(|p| {
                since.map_or(true, |cp| {
                    polytope_seq(p.id) > cp.get(&polytope_owner(p.id)).copied().unwrap_or(0)
                })
            })
            .collect();
        out.extend_from_slice(&(delta.len() as u32).to_le_bytes());
        for p in delta {
            out.extend_from_slice(&p.encode());
        }
        out.extend_from_slice(&self.sfi_wire().encode());
        out
    }

    pub fn decode_stream(buf: &[u8]) -> Result<(RobotId, Vec<StarPolytope>, SfiWire), MergeError> {
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize| -> Result<&[u8], MergeError> {
            let s = buf
                .get(*pos..*pos + n)
                .ok_or(MergeError::Malformed(*pos))?;
            *pos += n;
            Ok(s)
        };
        let sender = RobotId::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
        let n = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let mut polys = Vec::with_capacity(n);
        for _ in 0..n {
            let (p, used) =
                StarPolytope::decode(&buf[pos..]).ok_or(MergeError::Malformed(pos))?;
            pos += used;
            polys.push(p);
        }
        let sfi = SfiWire::decode(buf, &mut pos).ok_or(MergeError::Malformed(pos))?;
        if pos != buf.len() {
            return Err(MergeError::Malformed(pos));
        }
        Ok((sender, polys, sfi))
    }

    /// Apply a peer's stream. Frontier bookkeeping is recomputed from the
    /// polytopes, so the result is independent of merge order.
    pub fn merge_stream(&mut self, buf: &[u8], params: &Params) -> Result<MergeReport, MergeError> {
        let (_, polys, _) = Self::decode_stream(buf)?;
        self.insert_polytopes(polys, params)
    }

    /// Ids of current frontiers, for order-independence checks.
    pub fn frontier_ids(&self) -> Vec<FrontierId> {
        self.frontiers.keys().copied().collect()
    }

    pub fn polytope_ids(&self) -> Vec<PolytopeId> {
        self.index.iter().map(|p| p.id).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::PolytopeParams;
    use crate::starconvex::{build_polytope, sample_frame};
    use crate::world::{RobotState, VoxelWorld};
    use std::f64::consts::TAU;

    fn params() -> Params {
        Params::default()
    }

    fn robot(id: RobotId, pos: Point3<f64>) -> RobotState {
        RobotState {
            id,
            position: pos,
            yaw: 0.0,
            v_max: 1.0,
            sensor_range: 8.0,
            fov: (TAU, 0.25),
            comm_range: 5.0,
        }
    }

    fn observe(lib: &mut EnvLibrary, world: &VoxelWorld, pos: Point3<f64>, p: &Params) {
        let r = robot(lib.owner, pos);
        let samples = sample_frame(world, &r, &p.polytope).unwrap();
        let id = lib.alloc_polytope_id();
        let poly = build_polytope(&samples, &pos, 2.0 * r.sensor_range, id).unwrap();
        lib.insert_polytope(poly, p).unwrap();
        lib.refresh_sfi(p, r.sensor_range);
    }

    #[test]
    fn observation_creates_frontiers_and_svps() {
        let p = params();
        let world = VoxelWorld::new_free([60, 60, 6], 1.0);
        let mut lib = EnvLibrary::new(1);
        observe(&mut lib, &world, Point3::new(30.0, 30.0, 3.0), &p);
        assert!(!lib.frontiers.is_empty());
        assert!(!lib.clusters.is_empty());
        assert!(!lib.svps.is_empty());
        // Every cluster inside an SVP has a viewpoint in known free space.
        for svp in &lib.svps {
            for cid in &svp.members {
                let vp = &lib.viewpoints[cid];
                assert!(lib.index.contains_point(&vp.position, None, 1e-6));
            }
        }
    }

    #[test]
    fn self_merge_is_idempotent() {
        let p = params();
        let world = VoxelWorld::new_free([60, 60, 6], 1.0);
        let mut lib = EnvLibrary::new(1);
        observe(&mut lib, &world, Point3::new(30.0, 30.0, 3.0), &p);
        let before = lib.frontier_ids();
        let stream = lib.serialize(None);
        let report = lib.merge_stream(&stream, &p).unwrap();
        assert!(report.new_polytopes.is_empty());
        assert_eq!(report.new_frontiers, 0);
        assert_eq!(lib.frontier_ids(), before);
    }

    #[test]
    fn merge_is_order_independent() {
        let p = params();
        let world = VoxelWorld::new_free([80, 80, 6], 1.0);
        let mut a = EnvLibrary::new(1);
        let mut b = EnvLibrary::new(2);
        observe(&mut a, &world, Point3::new(25.0, 40.0, 3.0), &p);
        observe(&mut a, &world, Point3::new(32.0, 40.0, 3.0), &p);
        observe(&mut b, &world, Point3::new(50.0, 40.0, 3.0), &p);
        observe(&mut b, &world, Point3::new(43.0, 40.0, 3.0), &p);

        let sa = a.serialize(None);
        let sb = b.serialize(None);
        let mut ab = a.clone();
        ab.merge_stream(&sb, &p).unwrap();
        let mut ba = b.clone();
        ba.merge_stream(&sa, &p).unwrap();

        assert_eq!(ab.polytope_ids(), ba.polytope_ids());
        assert_eq!(ab.frontier_ids(), ba.frontier_ids());
    }

    #[test]
    fn merge_deletes_frontiers_covered_by_peer() {
        let p = params();
        let world = VoxelWorld::new_free([80, 80, 6], 1.0);
        let mut a = EnvLibrary::new(1);
        let mut b = EnvLibrary::new(2);
        observe(&mut a, &world, Point3::new(30.0, 40.0, 3.0), &p);
        // Peer observes overlapping space shifted along x.
        observe(&mut b, &world, Point3::new(36.0, 40.0, 3.0), &p);
        let before = a.frontiers.len();
        let report = a.merge_stream(&b.serialize(None), &p).unwrap();
        assert!(!report.deleted_frontiers.is_empty());
        assert!(report.new_frontiers > 0);
        // Deleted plus surviving accounts for everything that entered.
        assert_eq!(
            a.frontiers.len(),
            before + report.new_frontiers - report.deleted_frontiers.len()
        );
    }

    #[test]
    fn delta_sync_skips_known_polytopes() {
        let p = params();
        let world = VoxelWorld::new_free([80, 80, 6], 1.0);
        let mut a = EnvLibrary::new(1);
        let mut b = EnvLibrary::new(2);
        observe(&mut a, &world, Point3::new(25.0, 40.0, 3.0), &p);
        b.merge_stream(&a.serialize(None), &p).unwrap();
        let cp = b.checkpoint();
        // Nothing new: stream carries zero polytopes.
        let (_, polys, _) = EnvLibrary::decode_stream(&a.serialize(Some(&cp))).unwrap();
        assert!(polys.is_empty());
        // One new observation: exactly one polytope crosses the wire.
        observe(&mut a, &world, Point3::new(33.0, 40.0, 3.0), &p);
        let stream = a.serialize(Some(&cp));
        let (_, polys, _) = EnvLibrary::decode_stream(&stream).unwrap();
        assert_eq!(polys.len(), 1);
        assert!(stream.len() < a.serialize(None).len());
    }

    #[test]
    fn id_collision_with_different_content_faults() {
        let p = params();
        let world = VoxelWorld::new_free([80, 80, 6], 1.0);
        let mut a = EnvLibrary::new(1);
        observe(&mut a, &world, Point3::new(30.0, 40.0, 3.0), &p);
        let id = a.polytope_ids()[0];
        let r = robot(1, Point3::new(45.0, 40.0, 3.0));
        let samples = sample_frame(&world, &r, &p.polytope).unwrap();
        let forged = build_polytope(&samples, &r.position, 16.0, id).unwrap();
        assert_eq!(
            a.insert_polytope(forged, &p),
            Err(MergeError::IdCollision(id))
        );
    }

    #[test]
    fn svp_ids_stable_across_unrelated_updates() {
        let p = params();
        let world = VoxelWorld::new_free([200, 60, 6], 1.0);
        let mut lib = EnvLibrary::new(1);
        observe(&mut lib, &world, Point3::new(20.0, 30.0, 3.0), &p);
        let far_ids: BTreeSet<SvpId> = lib
            .svps
            .iter()
            .filter(|s| s.position.x < 40.0)
            .map(|s| s.id)
            .collect();
        assert!(!far_ids.is_empty());
        // A distant observation must not renumber untouched SVPs.
        observe(&mut lib, &world, Point3::new(170.0, 30.0, 3.0), &p);
        let now: BTreeSet<SvpId> = lib.svps.iter().map(|s| s.id).collect();
        assert!(far_ids.is_subset(&now));
    }

    #[test]
    fn stream_roundtrip_and_truncation() {
        let p = params();
        let world = VoxelWorld::new_free([60, 60, 6], 1.0);
        let mut lib = EnvLibrary::new(7);
        observe(&mut lib, &world, Point3::new(30.0, 30.0, 3.0), &p);
        let stream = lib.serialize(None);
        let (sender, polys, sfi) = EnvLibrary::decode_stream(&stream).unwrap();
        assert_eq!(sender, 7);
        assert_eq!(polys.len(), 1);
        assert_eq!(sfi.svps.len(), lib.svps.len());
        assert!(EnvLibrary::decode_stream(&stream[..stream.len() - 3]).is_err());
    }
}
