//! Joint meeting decision: motion-cost matrix over robots and
//! super-viewpoints, an exact routing solver for small instances, the three
//! rendezvous strategies, cheapest-arc construction with guided local
//! search refinement, and the rendezvous-time formula.
//!
//! Node indexing: robots occupy 0..n_robots, super-viewpoints follow.

use crate::config::SolverParams;
use crate::grid_path::KnownGrid;
use crate::sfi::SvpId;
use nalgebra::Point3;
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    Furthest,
    Nearest,
    ShortestMeeting,
}

impl Strategy {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "furthest" => Some(Strategy::Furthest),
            "nearest" => Some(Strategy::Nearest),
            "shortest" => Some(Strategy::ShortestMeeting),
            _ => None,
        }
    }
}

/// Symmetric travel times between all nodes; robots first, then SVPs.
#[derive(Debug, Clone)]
pub struct CostMatrix {
    pub n_robots: usize,
    pub positions: Vec<Point3<f64>>,
    /// Ids of the SVP nodes, parallel to positions[n_robots..].
    pub svp_ids: Vec<SvpId>,
    pub d: Vec<Vec<f64>>,
}

impl CostMatrix {
    pub fn n_nodes(&self) -> usize {
        self.n_robots + self.svp_ids.len()
    }

    pub fn n_svps(&self) -> usize {
        self.svp_ids.len()
    }

    /// Build from known free space. SVPs unreachable from any robot are
    /// dropped: every route must close at a shared rendezvous, so a node
    /// some robot cannot reach can never appear in a feasible plan.
    pub fn build(
        grid: &KnownGrid,
        robots: &[Point3<f64>],
        svps: &[(SvpId, Point3<f64>)],
        v_max: f64,
    ) -> CostMatrix {
        let reachable: Vec<&(SvpId, Point3<f64>)> = svps
            .iter()
            .filter(|(_, p)| {
                robots
                    .iter()
                    .all(|r| grid.motion_cost(r, p, v_max).is_finite())
            })
            .collect();
        let mut positions: Vec<Point3<f64>> = robots.to_vec();
        let mut svp_ids = Vec::new();
        for (id, p) in &reachable {
            positions.push(*p);
            svp_ids.push(*id);
        }
        let n = positions.len();
        let mut d = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in (i + 1)..n {
                let c = grid.motion_cost(&positions[i], &positions[j], v_max);
                d[i][j] = c;
                d[j][i] = c;
            }
        }
        CostMatrix {
            n_robots: robots.len(),
            positions,
            svp_ids,
            d,
        }
    }

    pub fn from_matrix(n_robots: usize, d: Vec<Vec<f64>>) -> CostMatrix {
        let n = d.len();
        CostMatrix {
            n_robots,
            positions: vec![Point3::origin(); n],
            svp_ids: (0..(n - n_robots) as u64).collect(),
            d,
        }
    }

    /// Sum of travel times from a node to every robot start.
    pub fn robot_distance_sum(&self, node: usize) -> f64 {
        (0..self.n_robots).map(|k| self.d[node][k]).sum()
    }

    /// Plain text dump: node kinds and coordinates, then the matrix.
    pub fn dump(&self) -> String {
        use std::fmt::Write;
        let mut s = String::new();
        writeln!(s, "robots {}", self.n_robots).unwrap();
        writeln!(s, "nodes {}", self.n_nodes()).unwrap();
        for (i, p) in self.positions.iter().enumerate() {
            let kind = if i < self.n_robots { "robot" } else { "svp" };
            let id = if i < self.n_robots {
                i as u64
            } else {
                self.svp_ids[i - self.n_robots]
            };
            writeln!(s, "{i} {kind} {id} {} {} {}", p.x, p.y, p.z).unwrap();
        }
        writeln!(s, "matrix").unwrap();
        for row in &self.d {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(s, "{}", cells.join(" ")).unwrap();
        }
        s
    }

    pub fn load(text: &str) -> Option<CostMatrix> {
        let mut lines = text.lines();
        let n_robots: usize = lines.next()?.strip_prefix("robots ")?.parse().ok()?;
        let n: usize = lines.next()?.strip_prefix("nodes ")?.parse().ok()?;
        let mut positions = Vec::with_capacity(n);
        let mut svp_ids = Vec::new();
        for _ in 0..n {
            let parts: Vec<&str> = lines.next()?.split_whitespace().collect();
            if parts.len() != 6 {
                return None;
            }
            if parts[1] == "svp" {
                svp_ids.push(parts[2].parse().ok()?);
            }
            positions.push(Point3::new(
                parts[3].parse().ok()?,
                parts[4].parse().ok()?,
                parts[5].parse().ok()?,
            ));
        }
        if lines.next()? != "matrix" {
            return None;
        }
        let mut d = Vec::with_capacity(n);
        for _ in 0..n {
            let row: Option<Vec<f64>> = lines
                .next()?
                .split_whitespace()
                .map(|v| v.parse().ok())
                .collect();
            let row = row?;
            if row.len() != n {
                return None;
            }
            d.push(row);
        }
        Some(CostMatrix {
            n_robots,
            positions,
            svp_ids,
            d,
        })
    }
}

/// Routes as ordered node lists per robot, ending at the rendezvous.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutePlan {
    pub rendezvous: usize,
    /// Intermediate SVP nodes per robot, in visit order; the rendezvous
    /// node is implicit at the end of each route.
    pub routes: Vec<Vec<usize>>,
    pub costs: Vec<f64>,
    /// Total travel time over all robots.
    pub objective: f64,
}

impl RoutePlan {
    fn from_routes(cost: &CostMatrix, rendezvous: usize, routes: Vec<Vec<usize>>) -> RoutePlan {
        let costs: Vec<f64> = routes
            .iter()
            .enumerate()
            .map(|(k, r)| route_cost(cost, k, r, rendezvous))
            .collect();
        let objective = costs.iter().sum();
        RoutePlan {
            rendezvous,
            routes,
            costs,
            objective,
        }
    }

    /// Longest single-robot route time.
    pub fn makespan(&self) -> f64 {
        self.costs.iter().fold(0.0, |a, &b| a.max(b))
    }
}

fn route_cost(cost: &CostMatrix, robot: usize, route: &[usize], rendezvous: usize) -> f64 {
    let mut prev = robot;
    let mut total = 0.0;
    for &n in route {
        total += cost.d[prev][n];
        prev = n;
    }
    total + cost.d[prev][rendezvous]
}

/// Binary decision variables reconstructed from a plan, for checking the
/// routing constraints directly on the integer-program form.
pub struct Decision {
    pub x: Vec<Vec<Vec<bool>>>,
    pub y: Vec<Vec<bool>>,
    pub t: Vec<bool>,
    pub objective: f64,
}

impl Decision {
    pub fn from_plan(plan: &RoutePlan, cost: &CostMatrix) -> Decision {
        let n = cost.n_nodes();
        let k_n = cost.n_robots;
        let mut x = vec![vec![vec![false; n]; n]; k_n];
        let mut y = vec![vec![false; n]; k_n];
        let mut t = vec![false; n];
        t[plan.rendezvous] = true;
        for (k, route) in plan.routes.iter().enumerate() {
            let mut prev = k;
            y[k][k] = true;
            for &node in route.iter().chain(std::iter::once(&plan.rendezvous)) {
                x[k][prev][node] = true;
                y[k][node] = true;
                prev = node;
            }
        }
        Decision {
            x,
            y,
            t,
            objective: plan.objective,
        }
    }

    /// Panics with the violated constraint when the variables are not a
    /// feasible routing decision.
    pub fn check(&self, cost: &CostMatrix) {
        let n = cost.n_nodes();
        let k_n = cost.n_robots;
        assert_eq!(self.t.iter().filter(|&&b| b).count(), 1, "rendezvous not unique");
        let r = self.t.iter().position(|&b| b).unwrap();
        assert!(r >= k_n, "rendezvous must be an SVP node");
        for k in 0..k_n {
            let out_start: usize = (0..n).filter(|&j| self.x[k][k][j]).count();
            assert_eq!(out_start, 1, "robot {k} must leave its start once");
            let in_r: usize = (0..n).filter(|&i| self.x[k][i][r]).count();
            assert_eq!(in_r, 1, "robot {k} must enter the rendezvous once");
            for j in k_n..n {
                if j == r {
                    continue;
                }
                let inc: usize = (0..n).filter(|&i| self.x[k][i][j]).count();
                let out: usize = (0..n).filter(|&i| self.x[k][j][i]).count();
                assert_eq!(inc, out, "flow broken at node {j} for robot {k}");
            }
            for j in 0..k_n {
                assert!(
                    (0..n).all(|i| !self.x[k][i][j]),
                    "arc into a robot start"
                );
            }
        }
        for j in k_n..n {
            if j == r {
                continue;
            }
            let visits: usize = (0..k_n)
                .map(|k| (0..n).filter(|&i| self.x[k][i][j]).count())
                .sum();
            assert!(visits <= 1, "node {j} visited more than once");
        }
        let j: f64 = (0..k_n)
            .map(|k| {
                (0..n)
                    .flat_map(|i| (0..n).map(move |jj| (i, jj)))
                    .filter(|&(i, jj)| self.x[k][i][jj])
                    .map(|(i, jj)| cost.d[i][jj])
                    .sum::<f64>()
            })
            .sum();
        assert!((j - self.objective).abs() < 1e-6, "objective mismatch");
    }
}

/// Optimal routing with the rendezvous fixed. A Held-Karp path dynamic
/// program per robot over subsets of the remaining SVPs, then a partition
/// dynamic program assigning subsets to robots.
pub fn solve_exact_fixed(cost: &CostMatrix, rendezvous: usize) -> Option<RoutePlan> {
    let k_n = cost.n_robots;
    let others: Vec<usize> = (k_n..cost.n_nodes()).filter(|&v| v != rendezvous).collect();
    let m = others.len();
    if m > 20 || k_n == 0 {
        return None;
    }
    let full = 1usize << m;

    // best_subset[k][mask]: cheapest start_k -> mask -> rendezvous path.
    let mut best_subset = vec![vec![f64::INFINITY; full]; k_n];
    let mut best_last = vec![vec![usize::MAX; full]; k_n];
    let mut parents: Vec<Vec<Vec<usize>>> = Vec::with_capacity(k_n);
    for k in 0..k_n {
        let mut dp = vec![vec![f64::INFINITY; m.max(1)]; full];
        let mut parent = vec![vec![usize::MAX; m.max(1)]; full];
        for l in 0..m {
            dp[1 << l][l] = cost.d[k][others[l]];
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
                    let c = dp[mask][l] + cost.d[others[l]][others[nx]];
                    if c < dp[nm][nx] {
                        dp[nm][nx] = c;
                        parent[nm][nx] = l;
                    }
                }
            }
        }
        best_subset[k][0] = cost.d[k][rendezvous];
        for mask in 1..full {
            for l in 0..m {
                if mask & (1 << l) == 0 {
                    continue;
                }
                let c = dp[mask][l] + cost.d[others[l]][rendezvous];
                if c < best_subset[k][mask] {
                    best_subset[k][mask] = c;
                    best_last[k][mask] = l;
                }
            }
        }
        parents.push(parent);
    }

    // f[k][mask]: cheapest cover of mask by robots 0..=k.
    let mut f = vec![vec![f64::INFINITY; full]; k_n];
    let mut pick = vec![vec![0usize; full]; k_n];
    for mask in 0..full {
        f[0][mask] = best_subset[0][mask];
        pick[0][mask] = mask;
    }
    for k in 1..k_n {
        for mask in 0..full {
            let mut sub = mask;
            loop {
                let rest = mask ^ sub;
                let c = f[k - 1][rest] + best_subset[k][sub];
                if c < f[k][mask] {
                    f[k][mask] = c;
                    pick[k][mask] = sub;
                }
                if sub == 0 {
                    break;
                }
                sub = (sub - 1) & mask;
            }
        }
    }
    if !f[k_n - 1][full - 1].is_finite() {
        return None;
    }

    // Recover assignment, then per-robot visit order.
    let mut masks = vec![0usize; k_n];
    let mut mask = full - 1;
    for k in (0..k_n).rev() {
        masks[k] = pick[k][mask];
        mask ^= masks[k];
    }
    let mut routes = Vec::with_capacity(k_n);
    for k in 0..k_n {
        let mut route = Vec::new();
        let mut mk = masks[k];
        let mut last = best_last[k][mk];
        while last != usize::MAX && mk != 0 {
            route.push(others[last]);
            let p = parents[k][mk][last];
            mk ^= 1 << last;
            last = p;
        }
        route.reverse();
        routes.push(route);
    }
    Some(RoutePlan::from_routes(cost, rendezvous, routes))
}

/// Globally optimal routing; enumerates every candidate rendezvous.
/// Refuses instances above `exact_cap` SVPs.
pub fn solve_exact(cost: &CostMatrix, params: &SolverParams) -> Option<RoutePlan> {
    if cost.n_svps() > params.exact_cap || cost.n_svps() == 0 {
        return None;
    }
    let mut best: Option<RoutePlan> = None;
    for r in cost.n_robots..cost.n_nodes() {
        if let Some(plan) = solve_exact_fixed(cost, r) {
            if plan.objective.is_finite()
                && best.as_ref().map_or(true, |b| plan.objective < b.objective - 1e-12)
            {
                best = Some(plan);
            }
        }
    }
    best
}

/// Pick the rendezvous node per strategy; ties break to the lowest node
/// index. Returns None when no SVP is reachable by every robot.
pub fn choose_rendezvous(
    cost: &CostMatrix,
    strategy: Strategy,
    params: &SolverParams,
) -> Option<usize> {
    let candidates: Vec<usize> = (cost.n_robots..cost.n_nodes())
        .filter(|&v| cost.robot_distance_sum(v).is_finite())
        .collect();
    if candidates.is_empty() {
        return None;
    }
    match strategy {
        Strategy::Furthest => candidates
            .iter()
            .copied()
            .max_by(|&a, &b| {
                cost.robot_distance_sum(a)
                    .total_cmp(&cost.robot_distance_sum(b))
                    .then(b.cmp(&a))
            }),
        Strategy::Nearest => candidates.iter().copied().min_by(|&a, &b| {
            cost.robot_distance_sum(a)
                .total_cmp(&cost.robot_distance_sum(b))
                .then(a.cmp(&b))
        }),
        Strategy::ShortestMeeting => candidates
            .iter()
            .copied()
            .map(|r| (r, route_given_rendezvous(cost, r, params).objective))
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
            .map(|(r, _)| r),
    }
}

/// Cheapest-arc construction followed by guided local search. The search
/// penalizes frequently used arcs, explores relocate, inter-route swap,
/// and intra-route 2-opt moves, and keeps the best plain objective seen.
pub fn route_given_rendezvous(
    cost: &CostMatrix,
    rendezvous: usize,
    params: &SolverParams,
) -> RoutePlan {
    let k_n = cost.n_robots;
    let todo: Vec<usize> = (k_n..cost.n_nodes()).filter(|&v| v != rendezvous).collect();

    // Cheapest arc: repeatedly append the globally cheapest extension.
    let mut routes: Vec<Vec<usize>> = vec![Vec::new(); k_n];
    let mut remaining: Vec<usize> = todo.clone();
    while !remaining.is_empty() {
        let mut best: Option<(f64, usize, usize)> = None;
        for k in 0..k_n {
            let tail = *routes[k].last().unwrap_or(&k);
            for (ri, &node) in remaining.iter().enumerate() {
                let c = cost.d[tail][node];
                if best.map_or(true, |(bc, _, _)| c < bc - 1e-12) {
                    best = Some((c, k, ri));
                }
            }
        }
        let (_, k, ri) = best.unwrap();
        routes[k].push(remaining.remove(ri));
    }
    let init = RoutePlan::from_routes(cost, rendezvous, routes);
    if todo.is_empty() {
        return init;
    }
    gls(cost, init, params)
}

fn gls(cost: &CostMatrix, init: RoutePlan, params: &SolverParams) -> RoutePlan {
    let rendezvous = init.rendezvous;
    let k_n = cost.n_robots;
    let mean_arc = {
        let mut sum = 0.0;
        let mut cnt = 0usize;
        for i in 0..cost.n_nodes() {
            for j in 0..cost.n_nodes() {
                if i != j && cost.d[i][j].is_finite() {
                    sum += cost.d[i][j];
                    cnt += 1;
                }
            }
        }
        if cnt == 0 {
            return init;
        }
        sum / cnt as f64
    };
    let lambda = params.gls_lambda_factor * mean_arc;
    let mut penalties: BTreeMap<(usize, usize), u32> = BTreeMap::new();
    let arc_pen = |penalties: &BTreeMap<(usize, usize), u32>, i: usize, j: usize| -> f64 {
        *penalties.get(&(i.min(j), i.max(j))).unwrap_or(&0) as f64
    };

    let aug_cost = |routes: &[Vec<usize>], penalties: &BTreeMap<(usize, usize), u32>| -> f64 {
        let mut total = 0.0;
        for (k, r) in routes.iter().enumerate() {
            let mut prev = k;
            for &n in r.iter().chain(std::iter::once(&rendezvous)) {
                total += cost.d[prev][n] + lambda * arc_pen(penalties, prev, n);
                prev = n;
            }
        }
        total
    };
    let plain_cost = |routes: &[Vec<usize>]| -> f64 {
        routes
            .iter()
            .enumerate()
            .map(|(k, r)| route_cost(cost, k, r, rendezvous))
            .sum()
    };

    let mut cur = init.routes.clone();
    let mut best_routes = cur.clone();
    let mut best_obj = plain_cost(&best_routes);
    let start = std::time::Instant::now();
    let mut iters = 0usize;
    let mut stall = 0usize;
    'outer: while iters < params.gls_iter_cap && stall < params.gls_stall_rounds {
        if let Some(ms) = params.gls_wall_cap_ms {
            if start.elapsed().as_millis() as u64 >= ms {
                break;
            }
        }
        // Descend to a local optimum of the penalized objective using
        // first-improvement scans in a fixed order.
        loop {
            iters += 1;
            if iters >= params.gls_iter_cap {
                break 'outer;
            }
            let base = aug_cost(&cur, &penalties);
            let mut improved = false;

            // Relocate one node anywhere.
            'rel: for ks in 0..k_n {
                for pos in 0..cur[ks].len() {
                    let node = cur[ks][pos];
                    for kd in 0..k_n {
                        let max_ins = if kd == ks {
                            cur[kd].len() - 1
                        } else {
                            cur[kd].len()
                        };
                        for ins in 0..=max_ins {
                            if kd == ks && ins == pos {
                                continue;
                            }
                            let mut cand = cur.clone();
                            cand[ks].remove(pos);
                            let at = ins.min(cand[kd].len());
                            cand[kd].insert(at, node);
                            if aug_cost(&cand, &penalties) < base - 1e-9 {
                                cur = cand;
                                improved = true;
                                break 'rel;
                            }
                        }
                    }
                }
            }
            if !improved {
                // Swap nodes between two routes.
                'swap: for ka in 0..k_n {
                    for kb in (ka + 1)..k_n {
                        for pa in 0..cur[ka].len() {
                            for pb in 0..cur[kb].len() {
                                let mut cand = cur.clone();
                                let tmp = cand[ka][pa];
                                cand[ka][pa] = cand[kb][pb];
                                cand[kb][pb] = tmp;
                                if aug_cost(&cand, &penalties) < base - 1e-9 {
                                    cur = cand;
                                    improved = true;
                                    break 'swap;
                                }
                            }
                        }
                    }
                }
            }
            if !improved {
                // 2-opt: reverse a segment within one route.
                'opt: for k in 0..k_n {
                    let len = cur[k].len();
                    for a in 0..len {
                        for b in (a + 1)..len {
                            let mut cand = cur.clone();
                            cand[k][a..=b].reverse();
                            if aug_cost(&cand, &penalties) < base - 1e-9 {
                                cur = cand;
                                improved = true;
                                break 'opt;
                            }
                        }
                    }
                }
            }
            if !improved {
                break;
            }
        }

        let obj = plain_cost(&cur);
        if obj < best_obj - 1e-9 {
            best_obj = obj;
            best_routes = cur.clone();
            stall = 0;
        } else {
            stall += 1;
        }

        // Penalize the used arc with the highest utility.
        let mut worst: Option<(f64, (usize, usize))> = None;
        for (k, r) in cur.iter().enumerate() {
            let mut prev = k;
            for &n in r.iter().chain(std::iter::once(&rendezvous)) {
                let key = (prev.min(n), prev.max(n));
                let util = cost.d[prev][n] / (1.0 + arc_pen(&penalties, prev, n));
                if worst.map_or(true, |(w, _)| util > w + 1e-12) {
                    worst = Some((util, key));
                }
                prev = n;
            }
        }
        if let Some((_, key)) = worst {
            *penalties.entry(key).or_insert(0) += 1;
        } else {
            break;
        }
    }
    RoutePlan::from_routes(cost, rendezvous, best_routes)
}

/// Full hierarchical plan: strategy picks the rendezvous, then routing.
pub fn plan_central(
    cost: &CostMatrix,
    strategy: Strategy,
    params: &SolverParams,
) -> Option<RoutePlan> {
    let r = choose_rendezvous(cost, strategy, params)?;
    Some(route_given_rendezvous(cost, r, params))
}

/// Earliest time every robot can be at the rendezvous, given the new plan
/// and each robot's previous commitment.
///
/// `last_missions`: per robot, the prior meeting time and the travel time
/// from that prior meeting position to the new rendezvous.
pub fn rendezvous_time(t_b: f64, t_cur: f64, t_e: f64, last_missions: &[(f64, f64)]) -> f64 {
    let carry = last_missions
        .iter()
        .map(|&(t_l, t_m)| t_l + t_m)
        .fold(f64::NEG_INFINITY, f64::max);
    t_e + (t_b + t_cur).max(carry)
}
