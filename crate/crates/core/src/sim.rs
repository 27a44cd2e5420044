//! Whole-run simulation: sensing, motion, communication, meetings, local
//! planning, the two baseline strategies, and run metrics with logs.
//!
//! A run is single-threaded and fully deterministic for a given scenario,
//! strategy, and seed: all per-tick iteration follows robot id order and no
//! wall-clock value feeds back into behavior. Solver wall times go to a
//! separate timing log that is excluded from the deterministic outputs.

use crate::central::{CostMatrix, Strategy};
use crate::config::Params;
use crate::envlib::{polytope_id, Checkpoint, EnvLibrary};
use crate::grid_path::KnownGrid;
use crate::local::{plan_local, replan_trigger, LocalError, LocalInstance};
use crate::meshtable::MeshTable;
use crate::protocol::{handle_meeting, select_host, MeetingCtx, Mission};
use crate::scenario::{Scenario, ScenarioError};
use crate::sfi::SvpId;
use crate::starconvex::{build_polytope, drop_occluded_meshes, sample_frame};
use crate::world::{cast_ray, comm_graph, step, RayHit, RobotId, RobotState, VoxelWorld, WorldError};
use nalgebra::Point3;
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStrategy {
    /// Mission-based rendezvous coordination.
    Ours(Strategy),
    /// Independent greedy exploration, no communication at all.
    NoCoordination,
    /// Fully shared map with moves restricted to keep the comm graph
    /// connected every tick.
    ContinuousConnection,
}

impl RunStrategy {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "ours" => Some(Self::Ours(Strategy::ShortestMeeting)),
            "ours-furthest" => Some(Self::Ours(Strategy::Furthest)),
            "ours-nearest" => Some(Self::Ours(Strategy::Nearest)),
            "no-coord" | "no_coordination" => Some(Self::NoCoordination),
            "continuous" | "continuous_connection" => Some(Self::ContinuousConnection),
            _ => None,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Self::Ours(Strategy::ShortestMeeting) => "ours",
            Self::Ours(Strategy::Furthest) => "ours-furthest",
            Self::Ours(Strategy::Nearest) => "ours-nearest",
            Self::NoCoordination => "no-coord",
            Self::ContinuousConnection => "continuous",
        }
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error("library merge failed: {0}")]
    Merge(#[from] crate::envlib::MergeError),
}

#[derive(Debug, Clone)]
pub struct RunMetrics {
    /// First time the union of all observations leaves no frontier; equals
    /// `end_time` when the run hit the tick cap first.
    pub exploration_time: f64,
    pub end_time: f64,
    pub complete: bool,
    pub observed_cells: usize,
    /// Share of observed cells scanned by two or more robots, percent.
    pub repeated_pct: f64,
    /// Share of observed cells first scanned while the observer had no
    /// communication partner, percent.
    pub independent_pct: f64,
    pub traj_len: Vec<f64>,
    pub traj_total: f64,
    /// Bytes actually transmitted (polytopes plus super frontier info).
    pub bytes_sent: u64,
    /// Bytes the same transfers would have cost as organized raw scans.
    pub raw_cloud_bytes: u64,
    pub deadline_faults: u32,
    pub infeasible_faults: u32,
}

impl RunMetrics {
    pub fn csv_header() -> &'static str {
        "scenario,strategy,seed,exploration_time,end_time,complete,observed_cells,\
         repeated_pct,independent_pct,traj_total,bytes_sent,raw_cloud_bytes,\
         deadline_faults,infeasible_faults"
    }

    pub fn csv_row(&self, scenario: &str, strategy: &str, seed: u64) -> String {
        format!(
            "{},{},{},{:.3},{:.3},{},{},{:.4},{:.4},{:.3},{},{},{},{}",
            scenario,
            strategy,
            seed,
            self.exploration_time,
            self.end_time,
            self.complete,
            self.observed_cells,
            self.repeated_pct,
            self.independent_pct,
            self.traj_total,
            self.bytes_sent,
            self.raw_cloud_bytes,
            self.deadline_faults,
            self.infeasible_faults,
        )
    }
}

#[derive(Debug, Default, Clone)]
pub struct RunLogs {
    /// `t,robot,event,payload`
    pub events: Vec<String>,
    /// `t,EVENT,payload`
    pub protocol: Vec<String>,
    /// `t,robot,plan_nodes,cost,budget`
    pub plans: Vec<String>,
    /// `t,from,to,bytes`
    pub bytes: Vec<String>,
    /// `t,robot,x,y,z`
    pub trajectories: Vec<String>,
}

#[derive(Debug)]
pub struct RunOutput {
    pub metrics: RunMetrics,
    pub logs: RunLogs,
    /// `t,phase,ms`; wall-clock, intentionally not deterministic.
    pub timings: Vec<String>,
}

struct Agent {
    st: RobotState,
    lib: EnvLibrary,
    /// Coarse grid of known free space for planning, includes received maps.
    grid: KnownGrid,
    /// Fine grid of cells this robot observed itself.
    cover: KnownGrid,
    /// Polytopes already rastered into `grid`.
    marked: BTreeSet<u64>,
    mission: Option<Mission>,
    /// SVPs assigned to other robots in the current mission.
    foreign: BTreeSet<SvpId>,
    /// Remaining local-plan targets, in visit order.
    plan_svps: Vec<(SvpId, Point3<f64>)>,
    path: VecDeque<Point3<f64>>,
    need_replan: bool,
    new_svp: bool,
    svp_consumed: bool,
    known_svps: BTreeSet<SvpId>,
    /// SVPs already visited. An id only survives a refresh when its cluster
    /// membership is unchanged, so a visited id that persists brought no new
    /// space and is never targeted again.
    visited_svps: BTreeSet<SvpId>,
    met_rendezvous: bool,
    fault_logged: BTreeSet<u64>,
    done: bool,
    dist: f64,
    last_gen: Option<Point3<f64>>,
    /// Per-robot polytope sequence for the shared-library baseline.
    shared_seq: u64,
    /// Ticks without any reachable target (greedy baseline bail-out).
    stuck: u32,
}

struct Sim<'a> {
    sc: &'a Scenario,
    params: Params,
    world: VoxelWorld,
    agents: Vec<Agent>,
    t: f64,
    logs: RunLogs,
    timings: Vec<String>,
    /// Union of everything anyone observed; empty frontier set here defines
    /// exploration completion.
    shadow: EnvLibrary,
    /// Per fine cell, bitmask of robots that scanned it.
    observers: Vec<u8>,
    independent_cells: usize,
    bytes_sent: u64,
    raw_cloud_bytes: u64,
    frame_bytes: u64,
    next_mission_id: u64,
    /// Sorted member ids of each robot's comm component last tick.
    prev_comp: BTreeMap<RobotId, Vec<RobotId>>,
    solo: Vec<bool>,
    deadline_faults: u32,
    infeasible_faults: u32,
    exploration_time: Option<f64>,
}

const SHARED_HOST: usize = 0;

pub fn run(sc: &Scenario, strategy: RunStrategy, seed: u64) -> Result<RunOutput, SimError> {
    let (world, robots) = sc.build(seed)?;
    let n = robots.len();
    assert!(n <= 8, "observer bitmask holds at most 8 robots");
    let z_plane = sc.mid_z();
    let pdims = [
        (sc.world.size_m[0] / sc.world.planning_resolution).round() as usize,
        (sc.world.size_m[1] / sc.world.planning_resolution).round() as usize,
    ];
    let cdims = [world.dims[0], world.dims[1]];
    let agents: Vec<Agent> = robots
        .into_iter()
        .map(|st| Agent {
            lib: EnvLibrary::new(st.id),
            grid: KnownGrid::new_planar(pdims, sc.world.planning_resolution, z_plane),
            cover: KnownGrid::new_planar(cdims, world.resolution, z_plane),
            marked: BTreeSet::new(),
            mission: None,
            foreign: BTreeSet::new(),
            plan_svps: Vec::new(),
            path: VecDeque::new(),
            need_replan: true,
            new_svp: false,
            svp_consumed: false,
            known_svps: BTreeSet::new(),
            visited_svps: BTreeSet::new(),
            met_rendezvous: false,
            fault_logged: BTreeSet::new(),
            done: false,
            dist: 0.0,
            last_gen: None,
            shared_seq: 0,
            stuck: 0,
            st,
        })
        .collect();

    let n_az = (360.0 / sc.params.cloud.native_azimuth_deg).round() as u64;
    let frame_bytes = n_az * sc.params.cloud.native_rings as u64 * 12;

    let mut sim = Sim {
        sc,
        params: sc.params.clone(),
        world,
        agents,
        t: 0.0,
        logs: RunLogs::default(),
        timings: Vec::new(),
        shadow: EnvLibrary::new(u32::MAX),
        observers: Vec::new(),
        independent_cells: 0,
        bytes_sent: 0,
        raw_cloud_bytes: 0,
        frame_bytes,
        next_mission_id: 0,
        prev_comp: BTreeMap::new(),
        solo: vec![true; n],
        deadline_faults: 0,
        infeasible_faults: 0,
        exploration_time: None,
    };
    sim.observers = vec![0u8; cdims[0] * cdims[1]];
    sim.run(strategy)
}

impl<'a> Sim<'a> {
    fn run(mut self, strategy: RunStrategy) -> Result<RunOutput, SimError> {
        let dt = self.sc.sim.dt;
        let mut complete = false;
        for _ in 0..self.sc.sim.tick_cap {
            self.update_components(strategy);
            self.sense_all(strategy)?;

            match strategy {
                RunStrategy::Ours(s) => {
                    self.meetings(s)?;
                    self.local_plans();
                    self.move_all(dt)?;
                    self.post_move_ours()?;
                }
                RunStrategy::NoCoordination => {
                    self.greedy_plans();
                    self.move_all(dt)?;
                    self.post_move_greedy(strategy)?;
                }
                RunStrategy::ContinuousConnection => {
                    self.shared_plans();
                    self.move_connected(dt)?;
                    self.post_move_greedy(strategy)?;
                }
            }

            for a in &self.agents {
                self.logs.trajectories.push(format!(
                    "{:.2},{},{:.3},{:.3},{:.3}",
                    self.t, a.st.id, a.st.position.x, a.st.position.y, a.st.position.z
                ));
            }
            self.t += dt;
            if self.exploration_time.is_none()
                && !self.shadow.index.is_empty()
                && self.shadow.frontiers.is_empty()
            {
                self.exploration_time = Some(self.t);
                self.logs
                    .events
                    .push(format!("{:.2},-1,explored,union frontier set empty", self.t));
            }
            if self.agents.iter().all(|a| a.done) {
                complete = true;
                break;
            }
        }

        for (id, f) in &self.shadow.frontiers {
            let probe = crate::frontier::stale_probe(f);
            self.logs.events.push(format!(
                "{:.2},-1,endfrontier,id={} parent={} c=({:.2},{:.2},{:.2}) n=({:.2},{:.2},{:.2}) v0=({:.2},{:.2},{:.2}) v1=({:.2},{:.2},{:.2}) v2=({:.2},{:.2},{:.2}) probe_in={} c_in={}",
                self.t, id, f.polytope_id,
                f.center.x, f.center.y, f.center.z,
                f.normal.x, f.normal.y, f.normal.z,
                f.vertices[0].x, f.vertices[0].y, f.vertices[0].z,
                f.vertices[1].x, f.vertices[1].y, f.vertices[1].z,
                f.vertices[2].x, f.vertices[2].y, f.vertices[2].z,
                self.shadow.index.contains_point(&probe, None, 0.05),
                self.shadow.index.contains_point(&f.center, Some(f.polytope_id), 0.05),
            ));
        }
        let observed = self.observers.iter().filter(|&&m| m != 0).count();
        let repeated = self
            .observers
            .iter()
            .filter(|&&m| m.count_ones() >= 2)
            .count();
        let pct = |num: usize| {
            if observed == 0 {
                0.0
            } else {
                100.0 * num as f64 / observed as f64
            }
        };
        let traj_len: Vec<f64> = self.agents.iter().map(|a| a.dist).collect();
        let metrics = RunMetrics {
            exploration_time: self.exploration_time.unwrap_or(self.t),
            end_time: self.t,
            complete: complete && self.exploration_time.is_some(),
            observed_cells: observed,
            repeated_pct: pct(repeated),
            independent_pct: pct(self.independent_cells),
            traj_total: traj_len.iter().sum(),
            traj_len,
            bytes_sent: self.bytes_sent,
            raw_cloud_bytes: self.raw_cloud_bytes,
            deadline_faults: self.deadline_faults,
            infeasible_faults: self.infeasible_faults,
        };
        Ok(RunOutput {
            metrics,
            logs: self.logs,
            timings: self.timings,
        })
    }

    fn active_states(&self) -> Vec<RobotState> {
        self.agents
            .iter()
            .filter(|a| !a.done)
            .map(|a| a.st.clone())
            .collect()
    }

    /// Recompute comm components and per-robot solo flags for this tick.
    fn update_components(&mut self, strategy: RunStrategy) {
        match strategy {
            RunStrategy::NoCoordination => {
                for s in &mut self.solo {
                    *s = true;
                }
            }
            RunStrategy::ContinuousConnection => {
                for s in &mut self.solo {
                    *s = false;
                }
            }
            RunStrategy::Ours(_) => {
                let comps = comm_graph(&self.active_states());
                for (i, a) in self.agents.iter().enumerate() {
                    self.solo[i] = comps
                        .iter()
                        .find(|c| c.contains(&a.st.id))
                        .map_or(true, |c| c.len() == 1);
                }
            }
        }
    }

    fn sense_all(&mut self, strategy: RunStrategy) -> Result<(), SimError> {
        for i in 0..self.agents.len() {
            if !self.agents[i].done {
                self.sense(i, false, strategy)?;
            }
        }
        Ok(())
    }

    /// Generate one free-space polytope at the robot's pose when it has
    /// traveled far enough since the last one (or when forced).
    fn sense(&mut self, i: usize, force: bool, strategy: RunStrategy) -> Result<(), SimError> {
        let pos = self.agents[i].st.position;
        let spacing =
            self.params.polytope.gen_spacing_factor * self.agents[i].st.sensor_range;
        let moved = self.agents[i]
            .last_gen
            .map_or(f64::INFINITY, |p| (pos - p).norm());
        // Even a forced observation is pointless from an unchanged pose.
        if moved < if force { 0.3 } else { spacing } {
            return Ok(());
        }

        let samples = match sample_frame(&self.world, &self.agents[i].st, &self.params.polytope) {
            Ok(s) => s,
            Err(e) => {
                self.logs.events.push(format!(
                    "{:.2},{},sense_skip,{}",
                    self.t, self.agents[i].st.id, e
                ));
                self.agents[i].last_gen = Some(pos);
                return Ok(());
            }
        };
        let shared = strategy == RunStrategy::ContinuousConnection;
        let id = if shared {
            self.agents[i].shared_seq += 1;
            polytope_id(self.agents[i].st.id, self.agents[i].shared_seq)
        } else {
            self.agents[i].lib.alloc_polytope_id()
        };
        let flip_r = self.params.polytope.flip_radius_factor * self.agents[i].st.sensor_range;
        let poly = match build_polytope(&samples, &pos, flip_r, id) {
            Ok(p) => p,
            Err(e) => {
                self.logs.events.push(format!(
                    "{:.2},{},sense_skip,{}",
                    self.t, self.agents[i].st.id, e
                ));
                self.agents[i].last_gen = Some(pos);
                return Ok(());
            }
        };
        self.agents[i].last_gen = Some(pos);
        self.logs.events.push(format!(
            "{:.2},{},polytope,id={}",
            self.t, self.agents[i].st.id, id
        ));

        let table = MeshTable::build(&poly, self.params.sfi.meshtable_cell_deg);
        let new_cells = {
            let a = &mut self.agents[i];
            a.grid.mark_polytope(&poly, &table);
            a.marked.insert(id);
            a.cover.mark_polytope_collect(&poly, &table)
        };
        let bit = 1u8 << self.agents[i].st.id;
        let solo = self.solo[i];
        let nx = self.world.dims[0] as i64;
        for c in new_cells {
            let idx = (c[1] * nx + c[0]) as usize;
            if self.observers[idx] == 0 && solo {
                self.independent_cells += 1;
            }
            self.observers[idx] |= bit;
        }

        self.shadow.insert_polytope(poly.clone(), &self.params)?;
        self.logs.events.push(format!(
            "{:.2},{},libstate,shadow_fr={} shadow_poly={}",
            self.t,
            self.agents[i].st.id,
            self.shadow.frontiers.len(),
            self.shadow.index.iter().count()
        ));

        if shared {
            // One upload to the host plus a download for every other robot.
            let n = self.agents.len();
            let host_id = self.agents[SHARED_HOST].st.id;
            let wire = poly.encode().len() as u64;
            if i != SHARED_HOST {
                self.charge(self.agents[i].st.id, host_id, wire, 1);
            }
            for k in 0..n {
                if k != SHARED_HOST && k != i {
                    self.charge(host_id, self.agents[k].st.id, wire, 1);
                }
            }
            // The shared library lives on the host agent.
            let sr = self.agents[i].st.sensor_range;
            let poly_copy = poly.clone();
            self.agents[SHARED_HOST]
                .lib
                .insert_polytope(poly, &self.params)?;
            self.agents[SHARED_HOST].lib.refresh_sfi(&self.params, sr);
            for k in 0..n {
                if k != i {
                    let a = &mut self.agents[k];
                    if a.marked.insert(id) {
                        a.grid.mark_polytope(&poly_copy, &table);
                    }
                }
            }
        } else {
            let sr = self.agents[i].st.sensor_range;
            let a = &mut self.agents[i];
            a.lib.insert_polytope(poly, &self.params)?;
            a.lib.refresh_sfi(&self.params, sr);
            let ids: BTreeSet<SvpId> = a.lib.svps.iter().map(|s| s.id).collect();
            if ids != a.known_svps {
                a.new_svp = true;
                a.known_svps = ids;
            }
        }
        Ok(())
    }

    /// Record one transfer and its raw-scan equivalent.
    fn charge(&mut self, from: RobotId, to: RobotId, bytes: u64, frames: u64) {
        self.bytes_sent += bytes;
        self.raw_cloud_bytes += frames * self.frame_bytes;
        self.logs
            .bytes
            .push(format!("{:.2},{},{},{}", self.t, from, to, bytes));
    }

    // ---- mission strategy ------------------------------------------------

    /// Detect meetings: a communication component holds one when its member
    /// set changed since last tick, or when a held mission's rendezvous time
    /// has arrived with every remaining participant present.
    fn meetings(&mut self, strategy: Strategy) -> Result<(), SimError> {
        let comps = comm_graph(&self.active_states());
        let id_to_idx: BTreeMap<RobotId, usize> = self
            .agents
            .iter()
            .enumerate()
            .map(|(i, a)| (a.st.id, i))
            .collect();

        let mut triggered: Vec<Vec<RobotId>> = Vec::new();
        for c in &comps {
            let changed = c
                .iter()
                .any(|r| self.prev_comp.get(r).map_or(true, |prev| prev != c));
            let scheduled = c.iter().any(|r| {
                let a = &self.agents[id_to_idx[r]];
                a.mission.as_ref().map_or(false, |m| {
                    self.t + 1e-9 >= m.t_c
                        && m.participants.iter().all(|p| {
                            c.contains(p)
                                || id_to_idx.get(p).map_or(true, |&k| self.agents[k].done)
                        })
                })
            });
            // A robot with no mission (start of the run, or freshly alone)
            // plans for itself even without company.
            let missionless = c.iter().any(|r| {
                let a = &self.agents[id_to_idx[r]];
                !a.done && a.mission.is_none()
            });
            if (changed && c.len() >= 2) || scheduled || missionless {
                triggered.push(c.clone());
            }
        }
        for c in &comps {
            for r in c {
                self.prev_comp.insert(*r, c.clone());
            }
        }

        for members in triggered {
            self.hold_meeting(&members, &id_to_idx, strategy)?;
        }
        Ok(())
    }

    fn hold_meeting(
        &mut self,
        members: &[RobotId],
        id_to_idx: &BTreeMap<RobotId, usize>,
        strategy: Strategy,
    ) -> Result<(), SimError> {
        let started = std::time::Instant::now();
        let host = select_host(members);
        let hi = id_to_idx[&host];

        // Library sync: everyone uploads their delta to the host, the host
        // merges, refreshes, and everyone adopts the merged state.
        let host_cp = self.agents[hi].lib.checkpoint();
        let mut member_cp: BTreeMap<RobotId, Checkpoint> = BTreeMap::new();
        for &r in members {
            if r == host {
                continue;
            }
            let ri = id_to_idx[&r];
            member_cp.insert(r, self.agents[ri].lib.checkpoint());
            let stream = self.agents[ri].lib.serialize(Some(&host_cp));
            let frames = stream_poly_count(&stream);
            self.charge(r, host, stream.len() as u64, frames);
            self.agents[hi].lib.merge_stream(&stream, &self.params)?;
        }
        let sr = self.agents[hi].st.sensor_range;
        self.agents[hi].lib.refresh_sfi(&self.params, sr);
        for &r in members {
            if r == host {
                continue;
            }
            let ri = id_to_idx[&r];
            let back = self.agents[hi].lib.serialize(Some(&member_cp[&r]));
            let frames = stream_poly_count(&back);
            self.charge(host, r, back.len() as u64, frames);
            let host_lib = self.agents[hi].lib.clone();
            self.agents[ri].lib.adopt(&host_lib);
        }
        // Raster any newly received polytopes into each member's planning
        // grid.
        for &r in members {
            let ri = id_to_idx[&r];
            let missing: Vec<u64> = self.agents[ri]
                .lib
                .polytope_ids()
                .into_iter()
                .filter(|id| !self.agents[ri].marked.contains(id))
                .collect();
            for id in missing {
                let poly = self.agents[ri].lib.index.get(id).unwrap().clone();
                let table = MeshTable::build(&poly, self.params.sfi.meshtable_cell_deg);
                self.agents[ri].grid.mark_polytope(&poly, &table);
                self.agents[ri].marked.insert(id);
            }
        }

        // Mission handling on the merged state.
        let grid = self.agents[hi].grid.clone();
        // A surviving id that some member already visited brought no new
        // space; routing anyone there again is wasted motion.
        let visited: BTreeSet<SvpId> = members
            .iter()
            .flat_map(|r| self.agents[id_to_idx[r]].visited_svps.iter().copied())
            .collect();
        let svps: Vec<(SvpId, Point3<f64>)> = self.agents[hi]
            .lib
            .svps
            .iter()
            .filter(|s| !visited.contains(&s.id))
            .map(|s| (s.id, s.position))
            .collect();
        let positions: BTreeMap<RobotId, Point3<f64>> = members
            .iter()
            .map(|&r| (r, self.agents[id_to_idx[&r]].st.position))
            .collect();
        let missions: BTreeMap<RobotId, Mission> = members
            .iter()
            .filter_map(|&r| {
                self.agents[id_to_idx[&r]]
                    .mission
                    .clone()
                    .map(|m| (r, m))
            })
            .collect();
        let v_max = self.agents[hi].st.v_max;
        let build_cost = |g: &[RobotId]| {
            let starts: Vec<Point3<f64>> = g.iter().map(|r| positions[r]).collect();
            CostMatrix::build(&grid, &starts, &svps, v_max)
        };
        let motion =
            |a: &Point3<f64>, b: &Point3<f64>| grid.motion_cost(a, b, v_max);
        let ctx = MeetingCtx {
            t: self.t,
            dt: self.sc.sim.dt,
            t_e: self.sc.sim.t_e,
            strategy,
            params: &self.params.solver,
            positions: &positions,
            missions: &missions,
            build_cost: &build_cost,
            motion: &motion,
        };
        let out = handle_meeting(&ctx, members, &mut self.next_mission_id);

        self.logs.protocol.extend(out.trace);
        for (mid, remaining) in out.shrunk {
            for &r in members {
                let a = &mut self.agents[id_to_idx[&r]];
                if let Some(m) = &mut a.mission {
                    if m.id == mid {
                        m.participants = remaining.clone();
                    }
                }
            }
        }
        for asg in out.assignments {
            let rendezvous_svp = asg
                .routes
                .values()
                .next()
                .and_then(|r| r.last().copied());
            for (&r, route) in &asg.routes {
                let a = &mut self.agents[id_to_idx[&r]];
                a.mission = Some(asg.mission.clone());
                a.foreign = asg
                    .routes
                    .iter()
                    .filter(|(&r2, _)| r2 != r)
                    .flat_map(|(_, nodes)| nodes.iter().copied())
                    .filter(|id| Some(*id) != rendezvous_svp && !route.contains(id))
                    .collect();
                a.met_rendezvous = false;
                self.logs.events.push(format!(
                    "{:.2},{},mission,id={} tc={:.2}",
                    self.t, r, asg.mission.id, asg.mission.t_c
                ));
            }
        }
        for r in out.released {
            self.logs
                .events
                .push(format!("{:.2},{},release,", self.t, r));
        }
        for r in out.completed {
            let a = &mut self.agents[id_to_idx[&r]];
            a.done = true;
            a.mission = None;
            a.path.clear();
            a.plan_svps.clear();
            self.logs
                .events
                .push(format!("{:.2},{},complete,", self.t, r));
        }
        for &r in members {
            let a = &mut self.agents[id_to_idx[&r]];
            a.need_replan = true;
            let ids: BTreeSet<SvpId> = a.lib.svps.iter().map(|s| s.id).collect();
            a.known_svps = ids;
        }
        self.timings.push(format!(
            "{:.2},meeting,{}",
            self.t,
            started.elapsed().as_millis()
        ));
        Ok(())
    }

    /// Replan each robot's route through known SVPs to its rendezvous when
    /// something changed or the deadline slack runs low.
    fn local_plans(&mut self) {
        for i in 0..self.agents.len() {
            if self.agents[i].done || self.agents[i].mission.is_none() {
                continue;
            }
            let slack = {
                let a = &self.agents[i];
                let m = a.mission.as_ref().unwrap();
                let remaining = path_len(&a.st.position, &a.path) / a.st.v_max;
                (m.t_c - self.t) - remaining
            };
            let a = &self.agents[i];
            let fire = a.need_replan
                || replan_trigger(
                    a.new_svp,
                    a.svp_consumed,
                    slack,
                    self.sc.sim.dt,
                    &self.params.solver,
                );
            if fire {
                self.replan(i);
            }
        }
    }

    fn replan(&mut self, i: usize) {
        let started = std::time::Instant::now();
        let (mission, pos, v_max) = {
            let a = &self.agents[i];
            (a.mission.clone().unwrap(), a.st.position, a.st.v_max)
        };
        let budget = mission.t_c - self.t;

        // Candidate SVPs: everything in the library except the rendezvous
        // itself, reachable through known free space.
        let cands: Vec<(SvpId, Point3<f64>)> = self.agents[i]
            .lib
            .svps
            .iter()
            .filter(|s| {
                (s.position - mission.rendezvous).norm() > 1e-6
                    && !self.agents[i].visited_svps.contains(&s.id)
            })
            .map(|s| (s.id, s.position))
            .collect();
        let grid = &self.agents[i].grid;
        let mut nodes: Vec<Point3<f64>> = vec![pos, mission.rendezvous];
        let mut ids: Vec<SvpId> = Vec::new();
        for (id, p) in &cands {
            if grid.motion_cost(&pos, p, v_max).is_finite() {
                nodes.push(*p);
                ids.push(*id);
            }
        }
        let n = nodes.len();
        let mut d = vec![vec![0.0f64; n]; n];
        for r in 0..n {
            let row = grid.costs_from(&nodes[r], &nodes, v_max);
            d[r] = row;
        }
        let foreign: Vec<bool> = ids
            .iter()
            .map(|id| self.agents[i].foreign.contains(id))
            .collect();
        let inst = LocalInstance {
            d,
            svp_ids: ids.clone(),
            foreign,
            budget,
        };
        let warm: Vec<usize> = self.agents[i]
            .plan_svps
            .iter()
            .filter_map(|(id, _)| ids.iter().position(|x| x == id).map(|k| k + 2))
            .collect();
        let warm_opt = if warm.is_empty() {
            None
        } else {
            Some(warm.as_slice())
        };
        match plan_local(&inst, warm_opt, &self.params.solver) {
            Ok(plan) => {
                let targets: Vec<(SvpId, Point3<f64>)> = plan.nodes[1..plan.nodes.len() - 1]
                    .iter()
                    .map(|&k| (ids[k - 2], nodes[k]))
                    .collect();
                let mut via = vec![pos];
                via.extend(targets.iter().map(|(_, p)| *p));
                via.push(mission.rendezvous);
                let a = &mut self.agents[i];
                match a.grid.path_via(&via) {
                    Some((wps, _)) => a.path = wps.into_iter().collect(),
                    None => {
                        a.path = a
                            .grid
                            .path(&pos, &mission.rendezvous)
                            .map(|(w, _)| w.into_iter().collect())
                            .unwrap_or_default()
                    }
                }
                a.plan_svps = targets;
                self.logs.plans.push(format!(
                    "{:.2},{},{},{:.3},{:.3}",
                    self.t,
                    a.st.id,
                    plan.nodes.len(),
                    plan.travel,
                    budget
                ));
            }
            Err(LocalError::Infeasible { direct, budget }) => {
                self.infeasible_faults += 1;
                let a = &mut self.agents[i];
                self.logs.events.push(format!(
                    "{:.2},{},fault_infeasible,direct={:.2} budget={:.2}",
                    self.t, a.st.id, direct, budget
                ));
                a.plan_svps.clear();
                a.path = a
                    .grid
                    .path(&pos, &mission.rendezvous)
                    .map(|(w, _)| w.into_iter().collect())
                    .unwrap_or_default();
            }
        }
        let a = &mut self.agents[i];
        a.need_replan = false;
        a.new_svp = false;
        a.svp_consumed = false;
        self.timings.push(format!(
            "{:.2},replan,{}",
            self.t,
            started.elapsed().as_millis()
        ));
    }

    fn post_move_ours(&mut self) -> Result<(), SimError> {
        let dt = self.sc.sim.dt;
        for i in 0..self.agents.len() {
            if self.agents[i].done {
                continue;
            }
            // SVP visit: force a fresh observation there.
            let reach = self.agents[i].grid.resolution * 1.6;
            if let Some(&(id, p)) = self.agents[i].plan_svps.first() {
                if (self.agents[i].st.position - p).norm() <= reach {
                    self.agents[i].plan_svps.remove(0);
                    self.agents[i].svp_consumed = true;
                    self.agents[i].visited_svps.insert(id);
                    self.logs.events.push(format!(
                        "{:.2},{},svp,id={}",
                        self.t, self.agents[i].st.id, id
                    ));
                    self.sense(i, true, RunStrategy::Ours(Strategy::ShortestMeeting))?;
                }
            }
            let mut arrived = false;
            let a = &mut self.agents[i];
            if let Some(m) = &a.mission {
                let at_pc = (a.st.position - m.rendezvous).norm() <= a.st.comm_range;
                if at_pc && self.t <= m.t_c + dt {
                    if !a.met_rendezvous {
                        self.logs
                            .events
                            .push(format!("{:.2},{},arrive,mission={}", self.t, a.st.id, m.id));
                        arrived = true;
                    }
                    a.met_rendezvous = true;
                }
                if self.t > m.t_c + dt {
                    if !a.met_rendezvous && a.fault_logged.insert(m.id) {
                        self.deadline_faults += 1;
                        self.logs.events.push(format!(
                            "{:.2},{},fault_deadline,mission={} tc={:.2}",
                            self.t, a.st.id, m.id, m.t_c
                        ));
                    }
                    // The meeting window is over; holding on to the mission
                    // would stall everyone involved. Dropping it makes the
                    // robot missionless, which schedules a fresh meeting for
                    // whatever component it is in.
                    a.mission = None;
                    a.foreign.clear();
                    a.plan_svps.clear();
                    a.path.clear();
                    a.need_replan = true;
                }
            }
            // A fresh scan at the rendezvous keeps exploration moving even
            // when the route itself carried no viewpoints.
            if arrived {
                self.sense(i, true, RunStrategy::Ours(Strategy::ShortestMeeting))?;
            }
        }
        Ok(())
    }

    // ---- baselines -------------------------------------------------------

    /// Greedy nearest-target planning for the uncoordinated baseline and
    /// the shared-map baseline.
    fn greedy_plans(&mut self) {
        for i in 0..self.agents.len() {
            if self.agents[i].done || !self.agents[i].path.is_empty() {
                continue;
            }
            self.greedy_retarget(i, i, &BTreeSet::new());
        }
    }

    /// Shared-map planning: the whole team converges on one target SVP from
    /// the host library, chosen by the lowest-id active robot. Divergent
    /// targets would stall the convoy, since every move that breaks the
    /// communication graph is reverted.
    fn shared_plans(&mut self) {
        let Some(lead) = self.agents.iter().position(|a| !a.done) else {
            return;
        };
        let visited: BTreeSet<SvpId> = self
            .agents
            .iter()
            .flat_map(|a| a.visited_svps.iter().copied())
            .collect();
        // Keep the leader's current target while it is still on offer.
        let current = self.agents[lead].plan_svps.first().copied();
        let keep = current.map_or(false, |(id, _)| {
            !visited.contains(&id)
                && self.agents[SHARED_HOST].lib.svps.iter().any(|s| s.id == id)
                && !self.agents[lead].path.is_empty()
        });
        if !keep {
            self.greedy_retarget(lead, SHARED_HOST, &visited);
        }
        let target = self.agents[lead].plan_svps.first().copied();
        match target {
            Some((id, p)) => {
                for i in 0..self.agents.len() {
                    if i == lead || self.agents[i].done {
                        continue;
                    }
                    let same = self.agents[i].plan_svps.first().map(|&(t, _)| t) == Some(id);
                    if !same || self.agents[i].path.is_empty() {
                        let pos = self.agents[i].st.position;
                        let lead_pos = self.agents[lead].st.position;
                        let a = &mut self.agents[i];
                        a.stuck = 0;
                        a.plan_svps = vec![(id, p)];
                        // Follow the leader's position when the target is not
                        // routable in this robot's own grid yet.
                        a.path = a
                            .grid
                            .path(&pos, &p)
                            .or_else(|| a.grid.path(&pos, &lead_pos))
                            .map(|(w, _)| w.into_iter().collect())
                            .unwrap_or_default();
                    }
                }
            }
            None => {
                // Leader found nothing; everyone shares its verdict.
                if self.agents[lead].done {
                    for a in &mut self.agents {
                        if !a.done {
                            a.done = true;
                            self.logs
                                .events
                                .push(format!("{:.2},{},complete,", self.t, a.st.id));
                        }
                    }
                }
            }
        }
    }

    /// Point agent `i` at the nearest unclaimed SVP of `lib_holder`'s
    /// library, or mark it done when nothing is left.
    fn greedy_retarget(&mut self, i: usize, lib_holder: usize, claimed: &BTreeSet<SvpId>) {
        let pos = self.agents[i].st.position;
        let v_max = self.agents[i].st.v_max;
        let cands: Vec<(SvpId, Point3<f64>)> = self.agents[lib_holder]
            .lib
            .svps
            .iter()
            .filter(|s| !claimed.contains(&s.id) && !self.agents[i].visited_svps.contains(&s.id))
            .map(|s| (s.id, s.position))
            .collect();
        let mut best: Option<(f64, SvpId, Point3<f64>)> = None;
        if !cands.is_empty() {
            let pts: Vec<Point3<f64>> = cands.iter().map(|(_, p)| *p).collect();
            let costs = self.agents[i].grid.costs_from(&pos, &pts, v_max);
            for (k, &(id, p)) in cands.iter().enumerate() {
                if costs[k].is_finite()
                    && best.map_or(true, |(c, bid, _)| {
                        costs[k] < c - 1e-12 || (costs[k] < c + 1e-12 && id < bid)
                    })
                {
                    best = Some((costs[k], id, p));
                }
            }
        }
        match best {
            Some((_, id, p)) => {
                let a = &mut self.agents[i];
                a.stuck = 0;
                a.plan_svps = vec![(id, p)];
                a.path = a
                    .grid
                    .path(&pos, &p)
                    .map(|(w, _)| w.into_iter().collect())
                    .unwrap_or_default();
            }
            None => {
                let frontier_empty = self.agents[lib_holder].lib.frontiers.is_empty();
                if self.agents[i].stuck == 0 {
                    let nsvp = self.agents[lib_holder].lib.svps.len();
                    let nfr = self.agents[lib_holder].lib.frontiers.len();
                    let ncl = self.agents[lib_holder].lib.clusters.len();
                    let nvp = self.agents[lib_holder].lib.viewpoints.len();
                    let nvis = claimed.len() + self.agents[i].visited_svps.len();
                    self.logs.events.push(format!(
                        "{:.2},{},stuckinfo,svps={} frontiers={} clusters={} vps={} excl={}",
                        self.t, self.agents[i].st.id, nsvp, nfr, ncl, nvp, nvis
                    ));
                }
                let a = &mut self.agents[i];
                a.stuck += 1;
                // Frontiers can linger a few ticks while new space uncovers
                // a viewpoint; only give up after a grace period.
                if frontier_empty || a.stuck > 200 {
                    a.done = true;
                    let why = if frontier_empty { "complete" } else { "stuck" };
                    self.logs
                        .events
                        .push(format!("{:.2},{},{},", self.t, a.st.id, why));
                }
            }
        }
    }

    fn post_move_greedy(&mut self, strategy: RunStrategy) -> Result<(), SimError> {
        for i in 0..self.agents.len() {
            if self.agents[i].done {
                continue;
            }
            let reach = self.agents[i].grid.resolution * 1.6;
            if let Some(&(id, p)) = self.agents[i].plan_svps.first() {
                if (self.agents[i].st.position - p).norm() <= reach {
                    self.agents[i].plan_svps.remove(0);
                    self.agents[i].path.clear();
                    self.agents[i].visited_svps.insert(id);
                    self.logs.events.push(format!(
                        "{:.2},{},svp,id={}",
                        self.t, self.agents[i].st.id, id
                    ));
                    self.sense(i, true, strategy)?;
                } else if self.agents[i].path.is_empty() {
                    // Route lost (bump retraction or unroutable target): drop
                    // the claim without marking it visited and retarget.
                    self.agents[i].plan_svps.clear();
                }
            }
        }
        Ok(())
    }

    // ---- motion ----------------------------------------------------------

    fn move_all(&mut self, dt: f64) -> Result<(), SimError> {
        for i in 0..self.agents.len() {
            self.move_one(i, dt)?;
        }
        Ok(())
    }

    /// Advance one robot along its path. Planning grids are optimistic
    /// (marked from coarsely sampled polytopes), so a move can run into a
    /// real obstacle; the robot then stays put, retracts the cell from its
    /// grid, and replans.
    fn move_one(&mut self, i: usize, dt: f64) -> Result<(), SimError> {
        let before = path_len(&self.agents[i].st.position, &self.agents[i].path);
        let mut st = [self.agents[i].st.clone()];
        let mut path = [self.agents[i].path.clone()];
        match step(&self.world, &mut st, &mut path, dt) {
            Ok(_) => {
                let after = path_len(&st[0].position, &path[0]);
                let a = &mut self.agents[i];
                a.dist += (before - after).max(0.0);
                a.st = st[0].clone();
                a.path = path[0].clone();
                Ok(())
            }
            Err(WorldError::PathBlocked { cell, .. }) => {
                let hit = Point3::new(
                    (cell[0] as f64 + 0.5) * self.world.resolution,
                    (cell[1] as f64 + 0.5) * self.world.resolution,
                    (cell[2] as f64 + 0.5) * self.world.resolution,
                );
                let a = &mut self.agents[i];
                let pc = a.grid.point_to_cell(&hit);
                a.grid.mark_occupied(pc);
                a.path.clear();
                a.need_replan = true;
                self.logs.events.push(format!(
                    "{:.2},{},bump,cell=({},{})",
                    self.t, a.st.id, pc[0], pc[1]
                ));
                Ok(())
            }
            Err(e) => Err(e.into()),
        }
    }

    /// Advance robots one at a time in id order; a move that would split
    /// the communication graph is skipped for this tick.
    fn move_connected(&mut self, dt: f64) -> Result<(), SimError> {
        for i in 0..self.agents.len() {
            let before = path_len(&self.agents[i].st.position, &self.agents[i].path);
            let mut st = [self.agents[i].st.clone()];
            let mut path = [self.agents[i].path.clone()];
            match step(&self.world, &mut st, &mut path, dt) {
                Ok(_) => {
                    let mut states: Vec<RobotState> =
                        self.agents.iter().map(|a| a.st.clone()).collect();
                    states[i] = st[0].clone();
                    if comm_graph(&states).len() == 1 {
                        let after = path_len(&st[0].position, &path[0]);
                        let a = &mut self.agents[i];
                        a.dist += (before - after).max(0.0);
                        a.st = st[0].clone();
                        a.path = path[0].clone();
                    }
                }
                Err(WorldError::PathBlocked { cell, .. }) => {
                    let hit = Point3::new(
                        (cell[0] as f64 + 0.5) * self.world.resolution,
                        (cell[1] as f64 + 0.5) * self.world.resolution,
                        (cell[2] as f64 + 0.5) * self.world.resolution,
                    );
                    let a = &mut self.agents[i];
                    let pc = a.grid.point_to_cell(&hit);
                    a.grid.mark_occupied(pc);
                    a.path.clear();
                    self.logs.events.push(format!(
                        "{:.2},{},bump,cell=({},{})",
                        self.t, a.st.id, pc[0], pc[1]
                    ));
                }
                Err(e) => return Err(e.into()),
            }
        }
        Ok(())
    }
}

/// Polytope count carried by a serialized library stream.
fn stream_poly_count(stream: &[u8]) -> u64 {
    u32::from_le_bytes(stream[4..8].try_into().unwrap()) as u64
}

fn path_len(pos: &Point3<f64>, path: &VecDeque<Point3<f64>>) -> f64 {
    let mut total = 0.0;
    let mut prev = *pos;
    for p in path {
        total += (p - prev).norm();
        prev = *p;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(n_robots: usize) -> Scenario {
        let mut s = Scenario::standard(25.0, 25.0, n_robots, 2);
        s.world.size_m = [25.0, 25.0, 2.0];
        s.sim.tick_cap = 4000;
        s
    }

    #[test]
    fn strategy_labels_roundtrip() {
        for s in ["ours", "no-coord", "continuous"] {
            assert_eq!(RunStrategy::parse(s).unwrap().label(), s);
        }
        assert!(RunStrategy::parse("bogus").is_none());
    }

    #[test]
    fn single_robot_explores_tiny_world() {
        let sc = tiny(1);
        let out = run(&sc, RunStrategy::Ours(Strategy::ShortestMeeting), 1).unwrap();
        assert!(out.metrics.complete, "run should finish: {:?}", out.metrics);
        assert!(out.metrics.observed_cells > 0);
        assert_eq!(out.metrics.deadline_faults, 0);
        assert!(out.metrics.traj_total > 0.0);
    }

    #[test]
    fn two_robots_ours_completes_and_logs() {
        let sc = tiny(2);
        let out = run(&sc, RunStrategy::Ours(Strategy::ShortestMeeting), 1).unwrap();
        assert!(out.metrics.complete, "{:?}", out.metrics);
        assert_eq!(out.metrics.deadline_faults, 0);
        assert!(out.metrics.bytes_sent > 0);
        assert!(out.metrics.raw_cloud_bytes > out.metrics.bytes_sent);
        assert!(out.logs.protocol.iter().any(|l| l.contains("MEET")));
        assert!(out.logs.protocol.iter().any(|l| l.contains("MISSION")));
        assert!(!out.logs.plans.is_empty());
        assert!(!out.logs.bytes.is_empty());
    }

    #[test]
    fn no_coordination_completes_without_bytes() {
        let sc = tiny(2);
        let out = run(&sc, RunStrategy::NoCoordination, 1).unwrap();
        assert!(out.metrics.complete, "{:?}", out.metrics);
        assert_eq!(out.metrics.bytes_sent, 0);
        assert!((out.metrics.independent_pct - 100.0).abs() < 1e-9);
    }

    #[test]
    fn continuous_connection_stays_connected() {
        let sc = tiny(2);
        let out = run(&sc, RunStrategy::ContinuousConnection, 1).unwrap();
        assert!(out.metrics.complete, "{:?}", out.metrics);
        assert_eq!(out.metrics.independent_pct, 0.0);
        assert!(out.metrics.bytes_sent > 0);
        // Connectivity held every logged tick: max pairwise distance at most
        // comm range for 2 robots.
        let mut by_t: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
        for l in &out.logs.trajectories {
            let f: Vec<&str> = l.split(',').collect();
            by_t.entry(f[0].to_string()).or_default().push((
                f[2].parse().unwrap(),
                f[3].parse().unwrap(),
            ));
        }
        for (_, ps) in by_t {
            if ps.len() == 2 {
                let d = ((ps[0].0 - ps[1].0).powi(2) + (ps[0].1 - ps[1].1).powi(2)).sqrt();
                assert!(d <= sc.robots.comm_range + 1e-6, "disconnected: {d}");
            }
        }
    }

    #[test]
    fn identical_runs_are_byte_identical() {
        let sc = tiny(2);
        let a = run(&sc, RunStrategy::Ours(Strategy::ShortestMeeting), 5).unwrap();
        let b = run(&sc, RunStrategy::Ours(Strategy::ShortestMeeting), 5).unwrap();
        assert_eq!(a.metrics.csv_row("t", "ours", 5), b.metrics.csv_row("t", "ours", 5));
        assert_eq!(a.logs.events, b.logs.events);
        assert_eq!(a.logs.protocol, b.logs.protocol);
        assert_eq!(a.logs.plans, b.logs.plans);
        assert_eq!(a.logs.bytes, b.logs.bytes);
        assert_eq!(a.logs.trajectories, b.logs.trajectories);
    }
}
