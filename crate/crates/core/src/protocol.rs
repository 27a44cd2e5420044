//! Meeting protocol: mission records, host selection, scheduled and
//! accidental meeting handling, and dispatch into the centralized planner.
//!
//! The simulator detects communication contact and merges libraries; this
//! module decides what missions come out of a meeting. It is pure: motion
//! costs and cost-matrix construction come in as callbacks.

use crate::central::{self, CostMatrix, RoutePlan, Strategy};
use crate::config::SolverParams;
use crate::sfi::SvpId;
use crate::world::RobotId;
use nalgebra::Point3;
use std::collections::{BTreeMap, BTreeSet};

#[derive(Debug, Clone, PartialEq)]
pub struct Mission {
    pub id: u64,
    pub rendezvous: Point3<f64>,
    pub t_c: f64,
    pub participants: BTreeSet<RobotId>,
}

/// One new mission with its per-robot SVP routes.
#[derive(Debug, Clone)]
pub struct Assignment {
    pub mission: Mission,
    pub routes: BTreeMap<RobotId, Vec<SvpId>>,
}

#[derive(Debug, Default)]
pub struct MeetingOutcome {
    pub assignments: Vec<Assignment>,
    /// Members released from a shared mission (kept by someone else).
    pub released: Vec<RobotId>,
    /// Members with no reachable SVPs anywhere: exploration complete.
    pub completed: Vec<RobotId>,
    /// Shrunk participant sets, applied to every present holder of the
    /// mission: (mission id, remaining participants).
    pub shrunk: Vec<(u64, BTreeSet<RobotId>)>,
    /// Protocol trace lines: `t,EVENT,payload`.
    pub trace: Vec<String>,
}

pub fn select_host(members: &[RobotId]) -> RobotId {
    *members.iter().min().expect("meeting needs members")
}

pub struct MeetingCtx<'a> {
    pub t: f64,
    pub dt: f64,
    pub t_e: f64,
    pub strategy: Strategy,
    pub params: &'a SolverParams,
    pub positions: &'a BTreeMap<RobotId, Point3<f64>>,
    /// Active mission per robot, if any.
    pub missions: &'a BTreeMap<RobotId, Mission>,
    /// Cost matrix over the given robots (in the given order) and the
    /// currently known super-viewpoints.
    pub build_cost: &'a dyn Fn(&[RobotId]) -> CostMatrix,
    /// Travel time between two points in known free space.
    pub motion: &'a dyn Fn(&Point3<f64>, &Point3<f64>) -> f64,
}

/// Handle one meeting among a communication component. Libraries must be
/// merged by the caller first.
pub fn handle_meeting(
    ctx: &MeetingCtx,
    members: &[RobotId],
    next_mission_id: &mut u64,
) -> MeetingOutcome {
    let mut out = MeetingOutcome::default();
    let member_set: BTreeSet<RobotId> = members.iter().copied().collect();
    let host = select_host(members);
    out.trace.push(format!(
        "{},MEET,host={} members={}",
        ctx.t,
        host,
        join_ids(members)
    ));

    // Group present members by mission. The authoritative participant set
    // of a mission is the intersection of the present holders' copies:
    // every release is recorded in some keeper's copy, and all keepers of
    // a mission attend its rendezvous, so stale copies only ever carry
    // extra (already released) members that the intersection removes.
    let mut by_mission: BTreeMap<u64, Vec<RobotId>> = BTreeMap::new();
    let mut pool: Vec<RobotId> = Vec::new();
    for &r in members {
        match ctx.missions.get(&r) {
            Some(m) => by_mission.entry(m.id).or_default().push(r),
            None => pool.push(r),
        }
    }
    for (mid, group) in &by_mission {
        let mut remaining: BTreeSet<RobotId> = ctx.missions[&group[0]].participants.clone();
        for r in &group[1..] {
            let copy = &ctx.missions[r].participants;
            remaining = remaining.intersection(copy).copied().collect();
        }

        if remaining.is_subset(&member_set) {
            // Every remaining participant is here: the mission can be
            // superseded outright, whether this is the appointed
            // rendezvous or an early full gathering.
            out.trace
                .push(format!("{},SUPERSEDE,mission={}", ctx.t, mid));
            pool.extend(group.iter().copied());
            continue;
        }
        if group.len() < 2 {
            // Lone holder of a mission with absent partners: libraries
            // merged, mission untouched.
            continue;
        }
        // Accidental meeting of a partial group: the member cheapest to
        // send to the old rendezvous keeps it, the rest are released.
        let mission = &ctx.missions[&group[0]];
        let keeper = *group
            .iter()
            .min_by(|&&a, &&b| {
                let ca = (ctx.motion)(&ctx.positions[&a], &mission.rendezvous);
                let cb = (ctx.motion)(&ctx.positions[&b], &mission.rendezvous);
                ca.total_cmp(&cb).then(a.cmp(&b))
            })
            .unwrap();
        out.trace
            .push(format!("{},KEEP,robot={} mission={}", ctx.t, keeper, mid));
        for &r in group {
            if r != keeper {
                remaining.remove(&r);
                out.released.push(r);
                out.trace
                    .push(format!("{},RELEASE,robot={} mission={}", ctx.t, r, mid));
                pool.push(r);
            }
        }
        out.shrunk.push((*mid, remaining));
    }
    pool.sort_unstable();
    pool.dedup();
    if !pool.is_empty() {
        plan_group(ctx, &pool, next_mission_id, &mut out);
    }
    out
}

/// Run the centralized planner for a group and record the new mission.
fn plan_group(
    ctx: &MeetingCtx,
    group: &[RobotId],
    next_mission_id: &mut u64,
    out: &mut MeetingOutcome,
) {
    let cost = (ctx.build_cost)(group);
    if cost.n_svps() == 0 {
        for &r in group {
            out.completed.push(r);
        }
        out.trace
            .push(format!("{},COMPLETE,members={}", ctx.t, join_ids(group)));
        return;
    }
    let plan = match central::plan_central(&cost, ctx.strategy, ctx.params) {
        Some(p) => p,
        None => {
            // Strategy found no candidate; fall back to the default.
            central::plan_central(&cost, Strategy::Furthest, ctx.params)
                .expect("n_svps > 0 implies a reachable rendezvous")
        }
    };
    let p_c = cost.positions[plan.rendezvous];
    let t_b = plan.makespan();
    let last: Vec<(f64, f64)> = group
        .iter()
        .filter_map(|r| ctx.missions.get(r))
        .map(|m| (m.t_c, (ctx.motion)(&m.rendezvous, &p_c)))
        .collect();
    let t_c = central::rendezvous_time(t_b, ctx.t, ctx.t_e, &last);

    *next_mission_id += 1;
    let mission = Mission {
        id: *next_mission_id,
        rendezvous: p_c,
        t_c,
        participants: group.iter().copied().collect(),
    };
    let routes = route_map(&cost, &plan, group);
    out.trace.push(format!(
        "{},MISSION,id={} pc=({:.2},{:.2},{:.2}) tc={:.2} members={}",
        ctx.t, mission.id, p_c.x, p_c.y, p_c.z, t_c, join_ids(group)
    ));
    out.assignments.push(Assignment { mission, routes });
}

fn route_map(
    cost: &CostMatrix,
    plan: &RoutePlan,
    group: &[RobotId],
) -> BTreeMap<RobotId, Vec<SvpId>> {
    let mut map = BTreeMap::new();
    for (k, route) in plan.routes.iter().enumerate() {
        let ids: Vec<SvpId> = route
            .iter()
            .chain(std::iter::once(&plan.rendezvous))
            .map(|&node| cost.svp_ids[node - cost.n_robots])
            .collect();
        map.insert(group[k], ids);
    }
    map
}

fn join_ids(ids: &[RobotId]) -> String {
    ids.iter()
        .map(|i| i.to_string())
        .collect::<Vec<_>>()
        .join("+")
}
