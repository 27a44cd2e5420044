//! Scenario files: world geometry, robot fleet, and simulation settings.
//!
//! A scenario is declarative TOML. Obstacles are either explicit boxes or a
//! seeded random layout; random layouts are re-sampled per box until the free
//! space stays one connected component, so every run can finish exploring.

use crate::config::Params;
use crate::world::{RobotState, VoxelWorld};
use nalgebra::Point3;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("failed to read scenario file: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse scenario file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("robot start {0:?} is inside an obstacle or out of bounds")]
    StartBlocked(Point3<f64>),
    #[error("robot starts are not all mutually reachable through free space")]
    StartsDisconnected,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldCfg {
    /// World extent in meters, x/y/z.
    pub size_m: [f64; 3],
    /// Voxel edge length, meters.
    pub resolution: f64,
    /// Cell size of the coarser grid used for path planning, meters.
    pub planning_resolution: f64,
}

impl Default for WorldCfg {
    fn default() -> Self {
        Self {
            size_m: [50.0, 50.0, 2.0],
            resolution: 0.5,
            planning_resolution: 1.0,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ObstacleCfg {
    /// Explicit boxes as [x0, y0, x1, y1] in meters, full slab height.
    pub boxes: Vec<[f64; 4]>,
    /// Number of random boxes to place (in addition to `boxes`).
    pub random_count: usize,
    /// Random box footprint bounds in meters, [min, max] per side.
    pub random_size: [f64; 2],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RobotCfg {
    pub count: usize,
    /// Explicit start positions [x, y] in meters. When empty, robots start
    /// clustered along the low-x/low-y corner, one comm radius apart.
    pub starts: Vec<[f64; 2]>,
    pub v_max: f64,
    pub sensor_range: f64,
    /// Horizontal and vertical field of view, radians.
    pub fov: [f64; 2],
    pub comm_range: f64,
}

impl Default for RobotCfg {
    fn default() -> Self {
        Self {
            count: 2,
            starts: Vec::new(),
            v_max: 1.0,
            sensor_range: 10.0,
            // Vertical fov sized so the outer sample rings hit floor and
            // ceiling around 6 m out: scans taken at viewpoint distance then
            // cover the whole slab there and swallow off-plane frontiers.
            fov: [std::f64::consts::TAU, 0.5],
            comm_range: 3.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SimCfg {
    /// Tick length, seconds.
    pub dt: f64,
    /// Fixed per-meeting planning overhead added to rendezvous deadlines.
    pub t_e: f64,
    /// Hard cap on simulated ticks; hitting it marks the run incomplete.
    pub tick_cap: usize,
}

impl Default for SimCfg {
    fn default() -> Self {
        Self {
            dt: 0.5,
            t_e: 5.0,
            tick_cap: 40_000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct Scenario {
    pub name: String,
    pub world: WorldCfg,
    pub obstacles: ObstacleCfg,
    pub robots: RobotCfg,
    pub sim: SimCfg,
    pub params: Params,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            name: "unnamed".into(),
            world: WorldCfg::default(),
            obstacles: ObstacleCfg::default(),
            robots: RobotCfg::default(),
            sim: SimCfg::default(),
            params: Params::default(),
        }
    }
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ScenarioError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serializes")
    }

    /// Standard benchmark scenario of a given footprint and fleet size.
    /// Sampling densities are coarsened relative to the library defaults so
    /// whole-mission runs stay desk-scale.
    pub fn standard(width_m: f64, height_m: f64, n_robots: usize, random_boxes: usize) -> Self {
        let mut s = Self::default();
        s.name = format!("standard-{}x{}-r{}", width_m as u64, height_m as u64, n_robots);
        s.world.size_m = [width_m, height_m, 2.0];
        s.robots.count = n_robots;
        s.obstacles.random_count = random_boxes;
        s.obstacles.random_size = [2.0, 7.0];
        s.params.polytope.sample_azimuth_deg = 10.0;
        // A large flip radius keeps near-wall hits from shadowing distant
        // free samples off the hull in thin vertical slabs.
        s.params.polytope.flip_radius_factor = 50.0;
        // Viewpoints must sit inside the full-slab coverage band of a scan
        // taken there, or off-plane frontiers would outlive every visit.
        s.params.sfi.r_opt_factor = 0.45;
        s.params.polytope.sample_rings = 3;
        s.params.sfi.meshtable_cell_deg = 4.0;
        s
    }

    pub fn mid_z(&self) -> f64 {
        self.world.size_m[2] / 2.0
    }

    /// Materialize the world and fleet for one seed. The seed only drives
    /// random obstacle placement; explicit geometry is seed-independent.
    pub fn build(&self, seed: u64) -> Result<(VoxelWorld, Vec<RobotState>), ScenarioError> {
        let res = self.world.resolution;
        let dims = [
            (self.world.size_m[0] / res).round() as usize,
            (self.world.size_m[1] / res).round() as usize,
            (self.world.size_m[2] / res).round() as usize,
        ];
        let mut world = VoxelWorld::new_free(dims, res);
        let z = self.mid_z();

        let starts = self.start_positions();
        for b in &self.obstacles.boxes {
            fill_column(&mut world, b);
        }

        if self.obstacles.random_count > 0 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5ce0_a11e_5eed);
            let mut placed = 0;
            let mut attempts = 0;
            while placed < self.obstacles.random_count && attempts < self.obstacles.random_count * 60 {
                attempts += 1;
                let [smin, smax] = self.obstacles.random_size;
                let w = rng.gen_range(smin..=smax);
                let h = rng.gen_range(smin..=smax);
                let x0 = rng.gen_range(0.0..(self.world.size_m[0] - w).max(0.001));
                let y0 = rng.gen_range(0.0..(self.world.size_m[1] - h).max(0.001));
                let b = [x0, y0, x0 + w, y0 + h];
                if starts.iter().any(|s| box_clearance(&b, s) < self.robots.sensor_range * 0.3) {
                    continue;
                }
                let mut trial = world.clone();
                fill_column(&mut trial, &b);
                if free_space_connected(&trial, &starts, z) {
                    world = trial;
                    placed += 1;
                }
            }
        }

        for s in &starts {
            let p = Point3::new(s[0], s[1], z);
            if world.occupied_at(&p) {
                return Err(ScenarioError::StartBlocked(p));
            }
        }
        if !free_space_connected(&world, &starts, z) {
            return Err(ScenarioError::StartsDisconnected);
        }

        let robots = starts
            .iter()
            .enumerate()
            .map(|(i, s)| RobotState {
                id: i as u32,
                position: Point3::new(s[0], s[1], z),
                yaw: 0.0,
                v_max: self.robots.v_max,
                sensor_range: self.robots.sensor_range,
                fov: (self.robots.fov[0], self.robots.fov[1]),
                comm_range: self.robots.comm_range,
            })
            .collect();
        Ok((world, robots))
    }

    fn start_positions(&self) -> Vec<[f64; 2]> {
        if !self.robots.starts.is_empty() {
            return self.robots.starts.clone();
        }
        // Cluster along the low edge, spaced under one comm radius so the
        // fleet starts as a single communication component.
        let margin = 2.0 * self.world.resolution;
        let gap = (self.robots.comm_range * 0.8).max(self.world.resolution);
        (0..self.robots.count)
            .map(|i| [margin + i as f64 * gap, margin])
            .collect()
    }
}

fn fill_column(world: &mut VoxelWorld, b: &[f64; 4]) {
    let top = world.bounds_max().z;
    world.fill_box(
        Point3::new(b[0], b[1], 0.0),
        Point3::new(b[2] - 1e-9, b[3] - 1e-9, top - 1e-9),
    );
}

fn box_clearance(b: &[f64; 4], p: &[f64; 2]) -> f64 {
    let dx = (b[0] - p[0]).max(p[0] - b[2]).max(0.0);
    let dy = (b[1] - p[1]).max(p[1] - b[3]).max(0.0);
    (dx * dx + dy * dy).sqrt()
}

/// True when every free cell of the mid-slab layer is reachable from the
/// first start position (4-connected flood fill). Obstacles span the full
/// slab height, so one layer stands for the whole volume.
fn free_space_connected(world: &VoxelWorld, starts: &[[f64; 2]], z: f64) -> bool {
    let Some(s0) = starts.first() else { return true };
    let start = world.point_to_cell(&Point3::new(s0[0], s0[1], z));
    if world.cell_occupied(start) {
        return false;
    }
    let zc = start[2];
    let (nx, ny) = (world.dims[0] as i64, world.dims[1] as i64);
    let mut seen = vec![false; (nx * ny) as usize];
    let idx = |x: i64, y: i64| (y * nx + x) as usize;
    let mut stack = vec![(start[0], start[1])];
    seen[idx(start[0], start[1])] = true;
    let mut reached = 0usize;
    while let Some((x, y)) = stack.pop() {
        reached += 1;
        for (dx, dy) in [(1i64, 0i64), (-1, 0), (0, 1), (0, -1)] {
            let (mx, my) = (x + dx, y + dy);
            if mx < 0 || my < 0 || mx >= nx || my >= ny || seen[idx(mx, my)] {
                continue;
            }
            if !world.cell_occupied([mx, my, zc]) {
                seen[idx(mx, my)] = true;
                stack.push((mx, my));
            }
        }
    }
    let free_layer = (0..nx * ny)
        .filter(|i| !world.cell_occupied([i % nx, i / nx, zc]))
        .count();
    reached == free_layer
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_roundtrip_preserves_fields() {
        let mut s = Scenario::standard(50.0, 50.0, 3, 8);
        s.sim.dt = 0.25;
        let back = Scenario::from_toml(&s.to_toml()).unwrap();
        assert_eq!(back.robots.count, 3);
        assert_eq!(back.obstacles.random_count, 8);
        assert_eq!(back.sim.dt, 0.25);
        assert_eq!(back.world.size_m, [50.0, 50.0, 2.0]);
    }

    #[test]
    fn defaults_fill_missing_sections() {
        let s = Scenario::from_toml("name = \"tiny\"\n[robots]\ncount = 4\n").unwrap();
        assert_eq!(s.robots.count, 4);
        assert_eq!(s.world.resolution, 0.5);
        assert!(s.sim.tick_cap > 0);
    }

    #[test]
    fn build_places_robots_in_free_space_at_mid_slab() {
        let s = Scenario::standard(50.0, 50.0, 3, 10);
        let (world, robots) = s.build(7).unwrap();
        assert_eq!(robots.len(), 3);
        for r in &robots {
            assert!(!world.occupied_at(&r.position));
            assert!((r.position.z - 1.0).abs() < 1e-9);
        }
        // Fleet starts as one comm component.
        let comps = crate::world::comm_graph(&robots);
        assert_eq!(comps.len(), 1);
    }

    #[test]
    fn random_layout_keeps_free_space_connected() {
        for seed in 0..5u64 {
            let s = Scenario::standard(50.0, 50.0, 2, 14);
            let (world, robots) = s.build(seed).unwrap();
            let starts: Vec<[f64; 2]> = robots
                .iter()
                .map(|r| [r.position.x, r.position.y])
                .collect();
            assert!(free_space_connected(&world, &starts, s.mid_z()));
            // Obstacles actually got placed.
            assert!(world.free_cell_count() < world.dims.iter().product::<usize>());
        }
    }

    #[test]
    fn same_seed_same_world() {
        let s = Scenario::standard(50.0, 50.0, 2, 10);
        let (w1, _) = s.build(3).unwrap();
        let (w2, _) = s.build(3).unwrap();
        assert_eq!(w1.free_cell_count(), w2.free_cell_count());
        for x in 0..w1.dims[0] as i64 {
            for y in 0..w1.dims[1] as i64 {
                assert_eq!(w1.cell_occupied([x, y, 2]), w2.cell_occupied([x, y, 2]));
            }
        }
    }

    #[test]
    fn explicit_box_blocks_cells() {
        let mut s = Scenario::default();
        s.obstacles.boxes = vec![[10.0, 10.0, 14.0, 14.0]];
        let (world, _) = s.build(0).unwrap();
        assert!(world.occupied_at(&Point3::new(12.0, 12.0, 1.0)));
        assert!(!world.occupied_at(&Point3::new(5.0, 5.0, 1.0)));
    }

    #[test]
    fn blocked_start_is_an_error() {
        let mut s = Scenario::default();
        s.robots.starts = vec![[12.0, 12.0]];
        s.obstacles.boxes = vec![[10.0, 10.0, 14.0, 14.0]];
        assert!(matches!(
            s.build(0),
            Err(ScenarioError::StartBlocked(_))
        ));
    }
}
