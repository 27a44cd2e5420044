//! Per-robot planning between meetings: route from the current position
//! through known super-viewpoints to the appointed meeting position, under
//! a hard arrival deadline, with penalties on nodes assigned to other
//! robots.
//!
//! Node indexing: 0 = robot position, 1 = meeting position, SVPs follow.
//!
//! The objective is lexicographic: first visit as many SVPs as the budget
//! allows, then minimize travel plus the penalties of the visited nodes.
//! Taken literally, a pure minimization over free subset selection would
//! always pick the empty route; coverage has to dominate for the robot to
//! explore at all, and the penalty term then steers selection and ordering
//! away from foreign-assigned areas.

use crate::config::SolverParams;
use crate::sfi::SvpId;
use thiserror::Error;

/// Exhaustive subset DP is used up to this many SVPs; larger instances go
/// through insertion plus local search.
const EXACT_SVPS: usize = 12;

#[derive(Debug, Clone)]
pub struct LocalInstance {
    /// Symmetric travel times over (robot, meeting, SVPs...).
    pub d: Vec<Vec<f64>>,
    /// Ids of SVP nodes, parallel to node indices 2...
    pub svp_ids: Vec<SvpId>,
    /// Whether the SVP appears in another robot's assigned path.
    pub foreign: Vec<bool>,
    /// Seconds of travel allowed: deadline minus current time.
    pub budget: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum LocalError {
    #[error("direct route to the meeting costs {direct} s, over the {budget} s budget")]
    Infeasible { direct: f64, budget: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalPlan {
    /// Node sequence: always starts at 0 and ends at 1.
    pub nodes: Vec<usize>,
    pub travel: f64,
    pub penalty: f64,
}

impl LocalPlan {
    pub fn visited(&self) -> usize {
        self.nodes.len() - 2
    }

    /// Lexicographic score: more coverage first, then lower cost.
    fn score(&self) -> (usize, f64) {
        (self.visited(), self.travel + self.penalty)
    }
}

impl LocalInstance {
    pub fn n_svps(&self) -> usize {
        self.svp_ids.len()
    }

    /// Sum of travel times from the node to the meeting position and every
    /// SVP, when the node is assigned to another robot; zero otherwise.
    pub fn penalty(&self, node: usize) -> f64 {
        debug_assert!(node >= 2);
        if !self.foreign[node - 2] {
            return 0.0;
        }
        let mut p = self.d[node][1];
        for j in 2..self.d.len() {
            p += self.d[node][j];
        }
        p
    }

    fn route_travel(&self, svps: &[usize]) -> f64 {
        let mut prev = 0;
        let mut total = 0.0;
        for &n in svps {
            total += self.d[prev][n];
            prev = n;
        }
        total + self.d[prev][1]
    }

    fn route_penalty(&self, svps: &[usize]) -> f64 {
        svps.iter().map(|&n| self.penalty(n)).sum()
    }

    fn plan_from(&self, svps: Vec<usize>) -> LocalPlan {
        let travel = self.route_travel(&svps);
        let penalty = self.route_penalty(&svps);
        let mut nodes = vec![0];
        nodes.extend(svps);
        nodes.push(1);
        LocalPlan {
            nodes,
            travel,
            penalty,
        }
    }
}

/// Plan the route. `warm_start` is the surviving SVP-node sequence of the
/// previous plan, already remapped to this instance's indices.
pub fn plan_local(
    inst: &LocalInstance,
    warm_start: Option<&[usize]>,
    params: &SolverParams,
) -> Result<LocalPlan, LocalError> {
    let direct = inst.d[0][1];
    if direct > inst.budget + 1e-9 {
        return Err(LocalError::Infeasible {
            direct,
            budget: inst.budget,
        });
    }
    let m = inst.n_svps();
    if m == 0 {
        return Ok(inst.plan_from(Vec::new()));
    }
    let mut best = if m <= EXACT_SVPS {
        plan_exact(inst)
    } else {
        plan_heuristic(inst, warm_start, params)
    };
    // The warm start, when still feasible, is a floor on quality.
    if let Some(ws) = warm_start {
        let ws: Vec<usize> = ws
            .iter()
            .copied()
            .filter(|&n| n >= 2 && n < inst.d.len())
            .collect();
        if inst.route_travel(&ws) <= inst.budget + 1e-9 {
            let wp = inst.plan_from(ws);
            if lex_better(&wp, &best) {
                best = wp;
            }
        }
    }
    Ok(best)
}

fn lex_better(a: &LocalPlan, b: &LocalPlan) -> bool {
    let (ca, sa) = a.score();
    let (cb, sb) = b.score();
    ca > cb || (ca == cb && sa < sb - 1e-9)
}

/// Subset dynamic program: optimal travel per (subset, last node), then
/// lexicographic selection over feasible subsets.
fn plan_exact(inst: &LocalInstance) -> LocalPlan {
    let m = inst.n_svps();
    let full = 1usize << m;
    let node = |l: usize| l + 2;
    let mut dp = vec![vec![f64::INFINITY; m]; full];
    let mut parent = vec![vec![usize::MAX; m]; full];
    for l in 0..m {
        dp[1 << l][l] = inst.d[0][node(l)];
    }
    for mask in 1..full {
        for l in 0..m {
            if mask & (1 << l) == 0 || !dp[mask][l].is_finite() {
                continue;
            }
            for nx in 0..m {
                if mask & (1 << nx) != 0 {
                    continue;
                }
                let nm = mask | (1 << nx);
                let c = dp[mask][l] + inst.d[node(l)][node(nx)];
                if c < dp[nm][nx] {
                    dp[nm][nx] = c;
                    parent[nm][nx] = l;
                }
            }
        }
    }

    let pen: Vec<f64> = (0..m).map(|l| inst.penalty(node(l))).collect();
    let mut best: Option<(usize, f64, usize, usize)> = None; // count, cost, mask, last
    // Empty route.
    let direct = inst.d[0][1];
    if direct <= inst.budget + 1e-9 {
        best = Some((0, direct, 0, usize::MAX));
    }
    for mask in 1..full {
        let count = mask.count_ones() as usize;
        let mask_pen: f64 = (0..m).filter(|l| mask & (1 << l) != 0).map(|l| pen[l]).sum();
        for l in 0..m {
            if mask & (1 << l) == 0 || !dp[mask][l].is_finite() {
                continue;
            }
            let travel = dp[mask][l] + inst.d[node(l)][1];
            if travel > inst.budget + 1e-9 {
                continue;
            }
            let cost = travel + mask_pen;
            let better = match best {
                None => true,
                Some((bc, bs, bm, bl)) => {
                    count > bc
                        || (count == bc
                            && (cost < bs - 1e-9
                                || (cost < bs + 1e-9 && (mask, l) < (bm, bl))))
                }
            };
            if better {
                best = Some((count, cost, mask, l));
            }
        }
    }
    let (_, _, mask, mut last) = best.expect("direct route checked feasible");
    let mut route = Vec::new();
    let mut mk = mask;
    while last != usize::MAX && mk != 0 {
        route.push(node(last));
        let p = parent[mk][last];
        mk ^= 1 << last;
        last = p;
    }
    route.reverse();
    inst.plan_from(route)
}

/// Cheapest-insertion construction from the warm start, then descent with
/// insert, remove-reinsert, relocate, and 2-opt moves.
fn plan_heuristic(
    inst: &LocalInstance,
    warm_start: Option<&[usize]>,
    params: &SolverParams,
) -> LocalPlan {
    let m = inst.n_svps();
    let mut route: Vec<usize> = warm_start
        .map(|w| {
            w.iter()
                .copied()
                .filter(|&n| n >= 2 && n < inst.d.len())
                .collect()
        })
        .unwrap_or_default();
    // Trim an infeasible warm start by dropping the node whose removal
    // saves the most travel.
    while inst.route_travel(&route) > inst.budget + 1e-9 && !route.is_empty() {
        let worst = (0..route.len())
            .min_by(|&a, &b| {
                let mut ra = route.clone();
                ra.remove(a);
                let mut rb = route.clone();
                rb.remove(b);
                inst.route_travel(&ra)
                    .total_cmp(&inst.route_travel(&rb))
                    .then(a.cmp(&b))
            })
            .unwrap();
        route.remove(worst);
    }

    // Insert remaining nodes while the budget allows, cheapest
    // detour-plus-penalty first.
    let mut used = vec![false; m];
    for &n in &route {
        used[n - 2] = true;
    }
    loop {
        let travel = inst.route_travel(&route);
        let mut best: Option<(f64, usize, usize)> = None; // score, node, pos
        for l in 0..m {
            if used[l] {
                continue;
            }
            let n = l + 2;
            for pos in 0..=route.len() {
                let prev = if pos == 0 { 0 } else { route[pos - 1] };
                let next = if pos == route.len() { 1 } else { route[pos] };
                let detour = inst.d[prev][n] + inst.d[n][next] - inst.d[prev][next];
                if travel + detour > inst.budget + 1e-9 {
                    continue;
                }
                let score = detour + inst.penalty(n);
                if best.map_or(true, |(s, _, _)| score < s - 1e-12) {
                    best = Some((score, n, pos));
                }
            }
        }
        match best {
            Some((_, n, pos)) => {
                route.insert(pos, n);
                used[n - 2] = true;
            }
            None => break,
        }
    }

    // Descent: relocate within route, 2-opt, swap a visited node for an
    // unvisited one when that lowers cost at equal coverage.
    let mut iters = 0usize;
    loop {
        iters += 1;
        if iters > params.gls_iter_cap.max(1) {
            break;
        }
        let base_cost = inst.route_travel(&route) + inst.route_penalty(&route);
        let mut improved = false;
        'moves: {
            for a in 0..route.len() {
                for b in 0..route.len() {
                    if a == b {
                        continue;
                    }
                    let mut cand = route.clone();
                    let n = cand.remove(a);
                    cand.insert(b.min(cand.len()), n);
                    if feasible_cheaper(inst, &cand, base_cost) {
                        route = cand;
                        improved = true;
                        break 'moves;
                    }
                }
            }
            for a in 0..route.len() {
                for b in (a + 1)..route.len() {
                    let mut cand = route.clone();
                    cand[a..=b].reverse();
                    if feasible_cheaper(inst, &cand, base_cost) {
                        route = cand;
                        improved = true;
                        break 'moves;
                    }
                }
            }
            for a in 0..route.len() {
                for l in 0..m {
                    if used[l] {
                        continue;
                    }
                    let mut cand = route.clone();
                    cand[a] = l + 2;
                    if feasible_cheaper(inst, &cand, base_cost) {
                        used[route[a] - 2] = false;
                        used[l] = true;
                        route = cand;
                        improved = true;
                        break 'moves;
                    }
                }
            }
        }
        if !improved {
            break;
        }
    }
    inst.plan_from(route)
}

fn feasible_cheaper(inst: &LocalInstance, route: &[usize], base_cost: f64) -> bool {
    inst.route_travel(route) <= inst.budget + 1e-9
        && inst.route_travel(route) + inst.route_penalty(route) < base_cost - 1e-9
}

/// Whether the robot should replan now.
pub fn replan_trigger(
    new_svp: bool,
    svp_consumed: bool,
    slack: f64,
    dt: f64,
    params: &SolverParams,
) -> bool {
    new_svp || svp_consumed || slack < params.slack_min_ticks * dt
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn params() -> SolverParams {
        SolverParams::default()
    }

    fn instance(pts: &[(f64, f64)], foreign: Vec<bool>, budget: f64) -> LocalInstance {
        let n = pts.len();
        let mut d = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                let dx = pts[i].0 - pts[j].0;
                let dy = pts[i].1 - pts[j].1;
                d[i][j] = (dx * dx + dy * dy).sqrt();
            }
        }
        LocalInstance {
            d,
            svp_ids: (0..(n - 2) as u64).collect(),
            foreign,
            budget,
        }
    }

    #[test]
    fn penalty_definition() {
        // Node 2 foreign; meeting at 4 s, three other SVPs at 1, 2, 3 s.
        let mut d = vec![vec![0.0; 6]; 6];
        let set = |d: &mut Vec<Vec<f64>>, i: usize, j: usize, v: f64| {
            d[i][j] = v;
            d[j][i] = v;
        };
        set(&mut d, 2, 1, 4.0);
        set(&mut d, 2, 3, 1.0);
        set(&mut d, 2, 4, 2.0);
        set(&mut d, 2, 5, 3.0);
        let inst = LocalInstance {
            d,
            svp_ids: vec![0, 1, 2, 3],
            foreign: vec![true, false, false, false],
            budget: 100.0,
        };
        assert_eq!(inst.penalty(2), 10.0);
        assert_eq!(inst.penalty(3), 0.0);
    }

    #[test]
    fn budget_forced_direct_route() {
        let inst = instance(
            &[(0.0, 0.0), (10.0, 0.0), (5.0, 5.0)],
            vec![false],
            10.0,
        );
        let plan = plan_local(&inst, None, &params()).unwrap();
        assert_eq!(plan.nodes, vec![0, 1]);
        assert!((plan.travel - 10.0).abs() < 1e-9);
    }

    #[test]
    fn over_budget_direct_faults() {
        let inst = instance(&[(0.0, 0.0), (10.0, 0.0)], vec![], 9.0);
        assert!(matches!(
            plan_local(&inst, None, &params()),
            Err(LocalError::Infeasible { .. })
        ));
    }

    #[test]
    fn free_svp_on_the_line_included() {
        let inst = instance(
            &[(0.0, 0.0), (10.0, 0.0), (5.0, 0.0)],
            vec![false],
            100.0,
        );
        let plan = plan_local(&inst, None, &params()).unwrap();
        assert_eq!(plan.nodes, vec![0, 2, 1]);
        assert!((plan.travel - 10.0).abs() < 1e-9);
        assert_eq!(plan.penalty, 0.0);
    }

    #[test]
    fn symmetric_options_prefer_unassigned() {
        // Two SVPs mirrored across the line; budget admits only one.
        let inst = instance(
            &[(0.0, 0.0), (10.0, 0.0), (5.0, 3.0), (5.0, -3.0)],
            vec![true, false],
            12.0,
        );
        let plan = plan_local(&inst, None, &params()).unwrap();
        assert_eq!(plan.nodes, vec![0, 3, 1], "{plan:?}");
        assert_eq!(plan.penalty, 0.0);
    }

    #[test]
    fn plan_respects_budget_always() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let p = params();
        for _ in 0..60 {
            let n = rng.gen_range(2..9);
            let pts: Vec<(f64, f64)> = (0..n + 2)
                .map(|_| (rng.gen_range(0.0..50.0), rng.gen_range(0.0..50.0)))
                .collect();
            let foreign: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.3)).collect();
            let direct =
                ((pts[0].0 - pts[1].0).powi(2) + (pts[0].1 - pts[1].1).powi(2)).sqrt();
            let budget = direct + rng.gen_range(0.0..80.0);
            let inst = instance(&pts, foreign, budget);
            let plan = plan_local(&inst, None, &p).unwrap();
            assert!(plan.travel <= inst.budget + 1e-9);
            assert_eq!(plan.nodes[0], 0);
            assert_eq!(*plan.nodes.last().unwrap(), 1);
            // No node repeats and the meeting position appears once.
            let mut seen = std::collections::BTreeSet::new();
            for &n in &plan.nodes {
                assert!(seen.insert(n));
            }
        }
    }

    /// Full enumeration of subsets and orders; lexicographic selection.
    fn oracle(inst: &LocalInstance) -> (usize, f64) {
        fn perms(items: &[usize]) -> Vec<Vec<usize>> {
            if items.is_empty() {
                return vec![Vec::new()];
            }
            let mut out = Vec::new();
            for (i, &x) in items.iter().enumerate() {
                let mut rest = items.to_vec();
                rest.remove(i);
                for mut p in perms(&rest) {
                    p.insert(0, x);
                    out.push(p);
                }
            }
            out
        }
        let m = inst.n_svps();
        let mut best: Option<(usize, f64)> = None;
        for mask in 0..(1usize << m) {
            let members: Vec<usize> =
                (0..m).filter(|l| mask & (1 << l) != 0).map(|l| l + 2).collect();
            for p in perms(&members) {
                let travel = inst.route_travel(&p);
                if travel > inst.budget + 1e-9 {
                    continue;
                }
                let cost = travel + inst.route_penalty(&p);
                let count = p.len();
                if best.map_or(true, |(bc, bs)| count > bc || (count == bc && cost < bs - 1e-9))
                {
                    best = Some((count, cost));
                }
            }
        }
        best.unwrap()
    }

    #[test]
    fn matches_enumeration_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let p = params();
        let mut checked = 0;
        while checked < 110 {
            let n = rng.gen_range(1..=6);
            let pts: Vec<(f64, f64)> = (0..n + 2)
                .map(|_| (rng.gen_range(0.0..40.0), rng.gen_range(0.0..40.0)))
                .collect();
            let foreign: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
            let direct =
                ((pts[0].0 - pts[1].0).powi(2) + (pts[0].1 - pts[1].1).powi(2)).sqrt();
            let budget = direct + rng.gen_range(0.0..60.0);
            let inst = instance(&pts, foreign, budget);
            let plan = plan_local(&inst, None, &p).unwrap();
            let (oc, os) = oracle(&inst);
            assert_eq!(plan.visited(), oc, "coverage mismatch");
            assert!(
                (plan.travel + plan.penalty - os).abs() < 1e-9,
                "cost {} vs oracle {}",
                plan.travel + plan.penalty,
                os
            );
            checked += 1;
        }
    }

    #[test]
    fn warm_start_never_worsens() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(14);
        let p = params();
        for _ in 0..40 {
            let n = rng.gen_range(3..16);
            let pts: Vec<(f64, f64)> = (0..n + 2)
                .map(|_| (rng.gen_range(0.0..50.0), rng.gen_range(0.0..50.0)))
                .collect();
            let foreign: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.3)).collect();
            let direct =
                ((pts[0].0 - pts[1].0).powi(2) + (pts[0].1 - pts[1].1).powi(2)).sqrt();
            let inst = instance(&pts, foreign, direct + 60.0);
            let cold = plan_local(&inst, None, &p).unwrap();
            let ws: Vec<usize> = cold.nodes[1..cold.nodes.len() - 1].to_vec();
            let warm = plan_local(&inst, Some(&ws), &p).unwrap();
            assert!(
                warm.visited() > cold.visited()
                    || (warm.visited() == cold.visited()
                        && warm.travel + warm.penalty <= cold.travel + cold.penalty + 1e-9)
            );
        }
    }

    #[test]
    fn heuristic_path_respects_budget_and_coverage() {
        // Above the exact cap: still feasible, endpoints fixed.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(19);
        let p = params();
        let n = 18;
        let pts: Vec<(f64, f64)> = (0..n + 2)
            .map(|_| (rng.gen_range(0.0..60.0), rng.gen_range(0.0..60.0)))
            .collect();
        let foreign: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.3)).collect();
        let inst = instance(&pts, foreign, 400.0);
        let plan = plan_local(&inst, None, &p).unwrap();
        assert!(plan.travel <= inst.budget + 1e-9);
        assert_eq!(plan.nodes[0], 0);
        assert_eq!(*plan.nodes.last().unwrap(), 1);
        // Ample budget: everything gets visited.
        assert_eq!(plan.visited(), n);
    }

    #[test]
    fn replan_triggers() {
        let p = params();
        assert!(!replan_trigger(false, false, 100.0, 1.0, &p));
        assert!(replan_trigger(true, false, 100.0, 1.0, &p));
        assert!(replan_trigger(false, true, 100.0, 1.0, &p));
        assert!(replan_trigger(false, false, 1.0, 1.0, &p));
    }
}
