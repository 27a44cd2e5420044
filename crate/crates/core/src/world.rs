//! Deterministic discrete-time world: occupancy voxel grid, robot kinematics,
//! raycast range sensor, and the range-limited communication graph.

use nalgebra::{Point3, Vector3};
use thiserror::Error;

pub type RobotId = u32;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("ray origin {0:?} lies in an occupied cell")]
    OriginOccupied(Point3<f64>),
    #[error("robot {robot} path crosses occupied cell {cell:?}")]
    PathBlocked { robot: RobotId, cell: [i64; 3] },
}

/// Axis-aligned occupancy voxel grid. Everything outside the bounds reports
/// occupied.
#[derive(Debug, Clone)]
pub struct VoxelWorld {
    pub resolution: f64,
    pub dims: [usize; 3],
    occupancy: Vec<bool>,
}

impl VoxelWorld {
    pub fn new_free(dims: [usize; 3], resolution: f64) -> Self {
        assert!(dims.iter().all(|&d| d > 0), "dims must be positive");
        assert!(resolution > 0.0);
        Self {
            resolution,
            dims,
            occupancy: vec![false; dims[0] * dims[1] * dims[2]],
        }
    }

    pub fn bounds_max(&self) -> Point3<f64> {
        Point3::new(
            self.dims[0] as f64 * self.resolution,
            self.dims[1] as f64 * self.resolution,
            self.dims[2] as f64 * self.resolution,
        )
    }

    #[inline]
    fn index(&self, c: [usize; 3]) -> usize {
        (c[2] * self.dims[1] + c[1]) * self.dims[0] + c[0]
    }

    #[inline]
    pub fn in_grid(&self, c: [i64; 3]) -> bool {
        (0..3).all(|a| c[a] >= 0 && (c[a] as usize) < self.dims[a])
    }

    /// Cell containing a point, without bounds clamping.
    #[inline]
    pub fn point_to_cell(&self, p: &Point3<f64>) -> [i64; 3] {
        [
            (p.x / self.resolution).floor() as i64,
            (p.y / self.resolution).floor() as i64,
            (p.z / self.resolution).floor() as i64,
        ]
    }

    #[inline]
    pub fn cell_center(&self, c: [i64; 3]) -> Point3<f64> {
        Point3::new(
            (c[0] as f64 + 0.5) * self.resolution,
            (c[1] as f64 + 0.5) * self.resolution,
            (c[2] as f64 + 0.5) * self.resolution,
        )
    }

    pub fn set_occupied(&mut self, c: [usize; 3], occ: bool) {
        let i = self.index(c);
        self.occupancy[i] = occ;
    }

    /// Fill an axis-aligned box given in meters.
    pub fn fill_box(&mut self, min: Point3<f64>, max: Point3<f64>) {
        let lo = self.point_to_cell(&min);
        let hi = self.point_to_cell(&max);
        for z in lo[2].max(0)..=hi[2].min(self.dims[2] as i64 - 1) {
            for y in lo[1].max(0)..=hi[1].min(self.dims[1] as i64 - 1) {
                for x in lo[0].max(0)..=hi[0].min(self.dims[0] as i64 - 1) {
                    self.set_occupied([x as usize, y as usize, z as usize], true);
                }
            }
        }
    }

    #[inline]
    pub fn cell_occupied(&self, c: [i64; 3]) -> bool {
        if !self.in_grid(c) {
            return true;
        }
        self.occupancy[self.index([c[0] as usize, c[1] as usize, c[2] as usize])]
    }

    /// Occupancy at a metric point; out-of-bounds counts as occupied.
    #[inline]
    pub fn occupied_at(&self, p: &Point3<f64>) -> bool {
        self.cell_occupied(self.point_to_cell(p))
    }

    pub fn free_cell_count(&self) -> usize {
        self.occupancy.iter().filter(|&&o| !o).count()
    }
}

/// Outcome of a raycast.
#[derive(Debug, Clone, PartialEq)]
pub enum RayHit {
    Unobstructed,
    /// First occupied cell intersected; `point` is that cell's center.
    Hit { point: Point3<f64>, cell: [i64; 3] },
}

/// Standard voxel-stepping traversal from `origin` toward `target`.
pub fn cast_ray(
    world: &VoxelWorld,
    origin: &Point3<f64>,
    target: &Point3<f64>,
) -> Result<RayHit, WorldError> {
    let start_cell = world.point_to_cell(origin);
    if world.cell_occupied(start_cell) {
        return Err(WorldError::OriginOccupied(*origin));
    }
    let end_cell = world.point_to_cell(target);
    if start_cell == end_cell {
        return Ok(RayHit::Unobstructed);
    }

    let dir = target - origin;
    let len = dir.norm();
    if len == 0.0 {
        return Ok(RayHit::Unobstructed);
    }
    let dir = dir / len;

    let mut cell = start_cell;
    let step: [i64; 3] = [
        if dir.x > 0.0 { 1 } else { -1 },
        if dir.y > 0.0 { 1 } else { -1 },
        if dir.z > 0.0 { 1 } else { -1 },
    ];
    let mut t_max = [f64::INFINITY; 3];
    let mut t_delta = [f64::INFINITY; 3];
    for a in 0..3 {
        let d = dir[a];
        if d != 0.0 {
            let cell_boundary = if d > 0.0 {
                (cell[a] + 1) as f64 * world.resolution
            } else {
                cell[a] as f64 * world.resolution
            };
            t_max[a] = (cell_boundary - origin[a]) / d;
            t_delta[a] = world.resolution / d.abs();
        }
    }

    loop {
        // Advance along the axis with the nearest boundary crossing.
        let axis = if t_max[0] <= t_max[1] && t_max[0] <= t_max[2] {
            0
        } else if t_max[1] <= t_max[2] {
            1
        } else {
            2
        };
        if t_max[axis] > len {
            return Ok(RayHit::Unobstructed);
        }
        cell[axis] += step[axis];
        t_max[axis] += t_delta[axis];
        if world.cell_occupied(cell) {
            return Ok(RayHit::Hit {
                point: world.cell_center(cell),
                cell,
            });
        }
        if cell == end_cell {
            return Ok(RayHit::Unobstructed);
        }
    }
}

/// Kinematic robot state.
#[derive(Debug, Clone)]
pub struct RobotState {
    pub id: RobotId,
    pub position: Point3<f64>,
    pub yaw: f64,
    pub v_max: f64,
    pub sensor_range: f64,
    /// Horizontal and vertical field of view, radians.
    pub fov: (f64, f64),
    pub comm_range: f64,
}

impl RobotState {
    pub fn validate(&self) {
        assert!(self.v_max > 0.0);
        assert!(self.sensor_range > 0.0);
        assert!(self.comm_range > 0.0);
    }
}

/// Simulation clock. `t_cur` only moves forward.
#[derive(Debug, Clone)]
pub struct SimClock {
    pub t_cur: f64,
    pub dt: f64,
}

impl SimClock {
    pub fn new(dt: f64) -> Self {
        assert!(dt > 0.0);
        Self { t_cur: 0.0, dt }
    }

    pub fn tick(&mut self) {
        self.t_cur += self.dt;
    }
}

/// Connected components of the range-limited communication graph. Two robots
/// are linked when their distance is at most the smaller of their comm
/// ranges (closed threshold). Returned as sorted id sets, sorted by minimum
/// member id.
pub fn comm_graph(robots: &[RobotState]) -> Vec<Vec<RobotId>> {
    let n = robots.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut Vec<usize>, i: usize) -> usize {
        if parent[i] != i {
            let r = find(parent, parent[i]);
            parent[i] = r;
        }
        parent[i]
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let d = (robots[i].position - robots[j].position).norm();
            let range = robots[i].comm_range.min(robots[j].comm_range);
            if d <= range {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri] = rj;
                }
            }
        }
    }
    let mut comps: std::collections::BTreeMap<usize, Vec<RobotId>> = Default::default();
    for i in 0..n {
        let r = find(&mut parent, i);
        comps.entry(r).or_default().push(robots[i].id);
    }
    let mut out: Vec<Vec<RobotId>> = comps.into_values().collect();
    for c in &mut out {
        c.sort_unstable();
    }
    out.sort_by_key(|c| c[0]);
    out
}

/// Events produced by one world step.
#[derive(Debug, Clone, PartialEq)]
pub enum StepEvent {
    /// Pair newly within communication range this tick.
    Meeting(RobotId, RobotId),
}

/// Advance each robot along its waypoint queue by at most `v_max * dt`.
/// `paths[i]` holds the remaining waypoints of `robots[i]`; reached
/// waypoints are popped. Meetings are reported for every pair currently in
/// range (the caller decides novelty).
pub fn step(
    world: &VoxelWorld,
    robots: &mut [RobotState],
    paths: &mut [std::collections::VecDeque<Point3<f64>>],
    dt: f64,
) -> Result<Vec<StepEvent>, WorldError> {
    assert_eq!(robots.len(), paths.len());
    if dt > 0.0 {
        for (robot, path) in robots.iter_mut().zip(paths.iter_mut()) {
            let mut budget = robot.v_max * dt;
            while budget > 1e-12 {
                let Some(&next) = path.front() else { break };
                let to_next: Vector3<f64> = next - robot.position;
                let d = to_next.norm();
                if d <= budget {
                    robot.position = next;
                    budget -= d;
                    path.pop_front();
                } else {
                    robot.position += to_next * (budget / d);
                    budget = 0.0;
                }
                if d > 1e-9 {
                    robot.yaw = to_next.y.atan2(to_next.x);
                }
            }
            let cell = world.point_to_cell(&robot.position);
            if world.cell_occupied(cell) {
                return Err(WorldError::PathBlocked {
                    robot: robot.id,
                    cell,
                });
            }
        }
    }

    let mut events = Vec::new();
    if dt > 0.0 {
        for i in 0..robots.len() {
            for j in (i + 1)..robots.len() {
                let d = (robots[i].position - robots[j].position).norm();
                if d <= robots[i].comm_range.min(robots[j].comm_range) {
                    events.push(StepEvent::Meeting(robots[i].id, robots[j].id));
                }
            }
        }
    }
    Ok(events)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::VecDeque;

    fn robot(id: RobotId, pos: Point3<f64>) -> RobotState {
        RobotState {
            id,
            position: pos,
            yaw: 0.0,
            v_max: 1.0,
            sensor_range: 10.0,
            fov: (std::f64::consts::TAU, 1.0),
            comm_range: 3.0,
        }
    }

    #[test]
    fn step_unit_speed_unit_time() {
        let world = VoxelWorld::new_free([20, 20, 2], 1.0);
        let mut robots = vec![robot(0, Point3::new(0.5, 0.5, 0.5))];
        let mut paths = vec![VecDeque::from(vec![Point3::new(10.5, 0.5, 0.5)])];
        step(&world, &mut robots, &mut paths, 1.0).unwrap();
        assert!((robots[0].position - Point3::new(1.5, 0.5, 0.5)).norm() < 1e-12);
    }

    #[test]
    fn step_meeting_within_comm_range() {
        let world = VoxelWorld::new_free([20, 20, 2], 1.0);
        let mut robots = vec![
            robot(0, Point3::new(0.5, 0.5, 0.5)),
            robot(1, Point3::new(3.4, 0.5, 0.5)),
        ];
        let mut paths = vec![VecDeque::new(), VecDeque::new()];
        let events = step(&world, &mut robots, &mut paths, 1.0).unwrap();
        assert_eq!(events, vec![StepEvent::Meeting(0, 1)]);
    }

    #[test]
    fn step_zero_dt_is_identity() {
        let world = VoxelWorld::new_free([20, 20, 2], 1.0);
        let mut robots = vec![robot(0, Point3::new(0.5, 0.5, 0.5))];
        let before = robots[0].position;
        let mut paths = vec![VecDeque::from(vec![Point3::new(10.5, 0.5, 0.5)])];
        let events = step(&world, &mut robots, &mut paths, 0.0).unwrap();
        assert!(events.is_empty());
        assert_eq!(robots[0].position, before);
    }

    #[test]
    fn cast_ray_empty_world_unobstructed() {
        let world = VoxelWorld::new_free([20, 20, 4], 0.5);
        let r = cast_ray(
            &world,
            &Point3::new(0.25, 0.25, 0.25),
            &Point3::new(9.0, 9.0, 1.0),
        )
        .unwrap();
        assert_eq!(r, RayHit::Unobstructed);
    }

    #[test]
    fn cast_ray_hits_wall_near_analytic_intersection() {
        // Wall of occupied cells at x = 5 m; ray along +x must report a hit
        // whose x is within one resolution of the analytic intersection.
        let res = 0.5;
        let mut world = VoxelWorld::new_free([24, 24, 4], res);
        world.fill_box(Point3::new(5.0, 0.0, 0.0), Point3::new(5.4, 11.9, 1.9));
        let r = cast_ray(
            &world,
            &Point3::new(0.25, 3.25, 0.75),
            &Point3::new(10.0, 3.25, 0.75),
        )
        .unwrap();
        match r {
            RayHit::Hit { point, .. } => assert!((point.x - 5.0).abs() <= res),
            _ => panic!("expected hit"),
        }
    }

    #[test]
    fn cast_ray_same_cell_degenerate() {
        let world = VoxelWorld::new_free([10, 10, 2], 1.0);
        let r = cast_ray(
            &world,
            &Point3::new(0.2, 0.2, 0.5),
            &Point3::new(0.8, 0.8, 0.5),
        )
        .unwrap();
        assert_eq!(r, RayHit::Unobstructed);
    }

    #[test]
    fn cast_ray_from_occupied_origin_errors() {
        let mut world = VoxelWorld::new_free([10, 10, 2], 1.0);
        world.set_occupied([0, 0, 0], true);
        assert!(cast_ray(
            &world,
            &Point3::new(0.5, 0.5, 0.5),
            &Point3::new(5.0, 5.0, 0.5)
        )
        .is_err());
    }

    #[test]
    fn cast_ray_prefix_of_unobstructed_is_unobstructed() {
        let mut world = VoxelWorld::new_free([30, 30, 3], 0.5);
        world.fill_box(Point3::new(7.0, 2.0, 0.0), Point3::new(8.0, 9.0, 1.4));
        let o = Point3::new(1.25, 1.25, 0.75);
        let t = Point3::new(6.1, 13.7, 0.75);
        if cast_ray(&world, &o, &t).unwrap() == RayHit::Unobstructed {
            for k in 1..10 {
                let frac = k as f64 / 10.0;
                let mid = o + (t - o) * frac;
                assert_eq!(cast_ray(&world, &o, &mid).unwrap(), RayHit::Unobstructed);
            }
        }
    }

    #[test]
    fn comm_graph_triangle_single_component() {
        let robots = vec![
            robot(0, Point3::new(0.0, 0.0, 0.0)),
            robot(1, Point3::new(1.0, 0.0, 0.0)),
            robot(2, Point3::new(0.0, 1.0, 0.0)),
        ];
        assert_eq!(comm_graph(&robots), vec![vec![0, 1, 2]]);
    }

    #[test]
    fn comm_graph_closed_threshold_at_exact_range() {
        let robots = vec![
            robot(0, Point3::new(0.0, 0.0, 0.0)),
            robot(1, Point3::new(3.0, 0.0, 0.0)),
        ];
        assert_eq!(comm_graph(&robots), vec![vec![0, 1]]);
    }

    #[test]
    fn comm_graph_chain_is_transitive() {
        // A-B in range, B-C in range, A-C out of range: one component.
        // Oracle: plain union-find over the pairwise range relation.
        let robots = vec![
            robot(0, Point3::new(0.0, 0.0, 0.0)),
            robot(1, Point3::new(2.5, 0.0, 0.0)),
            robot(2, Point3::new(5.0, 0.0, 0.0)),
        ];
        assert!((robots[0].position - robots[2].position).norm() > 3.0);
        assert_eq!(comm_graph(&robots), vec![vec![0, 1, 2]]);
    }

    #[test]
    fn out_of_bounds_reports_occupied() {
        let world = VoxelWorld::new_free([5, 5, 1], 1.0);
        assert!(world.occupied_at(&Point3::new(-0.1, 2.0, 0.5)));
        assert!(world.occupied_at(&Point3::new(2.0, 5.1, 0.5)));
    }
}
