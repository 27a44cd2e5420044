//! Motion costs over the cells a robot has actually observed as free.
//!
//! Planned costs are computed on the known-free bitmap only, so a path that
//! exists at planning time still exists at execution time; extra knowledge
//! can only shorten it.

use crate::meshtable::MeshTable;
use crate::starconvex::StarPolytope;
use nalgebra::Point3;
use std::cmp::Reverse;
use std::collections::BinaryHeap;

/// Bitmap of cells known to be free, aligned with the world grid.
#[derive(Debug, Clone)]
pub struct KnownGrid {
    pub resolution: f64,
    pub dims: [usize; 3],
    free: Vec<bool>,
    /// Cells retracted after a collision; polytope marking never reclaims
    /// them.
    blocked: Vec<bool>,
    /// For single-layer grids: the height of the plane the robots fly in.
    /// Cell centers and containment tests use this z instead of the cell's
    /// own center, so a thin sensing wedge around the flight plane marks
    /// cells correctly.
    z_plane: Option<f64>,
}

const SQRT2: f64 = std::f64::consts::SQRT_2;

impl KnownGrid {
    pub fn new(dims: [usize; 3], resolution: f64) -> Self {
        assert!(resolution > 0.0);
        KnownGrid {
            resolution,
            dims,
            free: vec![false; dims[0] * dims[1] * dims[2]],
            blocked: vec![false; dims[0] * dims[1] * dims[2]],
            z_plane: None,
        }
    }

    /// One-layer grid evaluated at a fixed flight plane.
    pub fn new_planar(dims_xy: [usize; 2], resolution: f64, z_plane: f64) -> Self {
        let mut g = Self::new([dims_xy[0], dims_xy[1], 1], resolution);
        g.z_plane = Some(z_plane);
        g
    }

    fn idx(&self, c: [i64; 3]) -> Option<usize> {
        if c.iter()
            .zip(&self.dims)
            .any(|(&v, &d)| v < 0 || v >= d as i64)
        {
            return None;
        }
        Some((c[2] as usize * self.dims[1] + c[1] as usize) * self.dims[0] + c[0] as usize)
    }

    pub fn is_free(&self, c: [i64; 3]) -> bool {
        self.idx(c).map_or(false, |i| self.free[i])
    }

    pub fn mark_free(&mut self, c: [i64; 3]) {
        if let Some(i) = self.idx(c) {
            if !self.blocked[i] {
                self.free[i] = true;
            }
        }
    }

    /// Retract a cell after a collision showed an optimistic marking; it
    /// stays occupied no matter what gets marked over it later.
    pub fn mark_occupied(&mut self, c: [i64; 3]) {
        if let Some(i) = self.idx(c) {
            self.free[i] = false;
            self.blocked[i] = true;
        }
    }

    pub fn free_count(&self) -> usize {
        self.free.iter().filter(|&&f| f).count()
    }

    pub fn point_to_cell(&self, p: &Point3<f64>) -> [i64; 3] {
        let z = match self.z_plane {
            Some(_) => 0,
            None => (p.z / self.resolution).floor() as i64,
        };
        [
            (p.x / self.resolution).floor() as i64,
            (p.y / self.resolution).floor() as i64,
            z,
        ]
    }

    pub fn cell_center(&self, c: [i64; 3]) -> Point3<f64> {
        let z = self
            .z_plane
            .unwrap_or((c[2] as f64 + 0.5) * self.resolution);
        Point3::new(
            (c[0] as f64 + 0.5) * self.resolution,
            (c[1] as f64 + 0.5) * self.resolution,
            z,
        )
    }

    /// Mark every cell whose center lies inside the polytope. Scans the
    /// axis-aligned box around the origin out to the polytope reach.
    pub fn mark_polytope(&mut self, poly: &StarPolytope, table: &MeshTable) {
        self.mark_polytope_collect(poly, table);
    }

    /// Same as `mark_polytope` but returns the newly marked cells.
    pub fn mark_polytope_collect(
        &mut self,
        poly: &StarPolytope,
        table: &MeshTable,
    ) -> Vec<[i64; 3]> {
        let r = table.reach;
        let lo = self.point_to_cell(&Point3::new(
            poly.origin.x - r,
            poly.origin.y - r,
            poly.origin.z - r,
        ));
        let hi = self.point_to_cell(&Point3::new(
            poly.origin.x + r,
            poly.origin.y + r,
            poly.origin.z + r,
        ));
        let mut fresh = Vec::new();
        for z in lo[2].max(0)..=hi[2].min(self.dims[2] as i64 - 1) {
            for y in lo[1].max(0)..=hi[1].min(self.dims[1] as i64 - 1) {
                for x in lo[0].max(0)..=hi[0].min(self.dims[0] as i64 - 1) {
                    let c = [x, y, z];
                    let i = self.idx(c).unwrap();
                    if self.free[i] || self.blocked[i] {
                        continue;
                    }
                    let p = self.cell_center(c);
                    if (p - poly.origin).norm() <= r && table.contains(poly, &p, 0.0) {
                        self.free[i] = true;
                        fresh.push(c);
                    }
                }
            }
        }
        fresh
    }

    /// Travel times from one point to many targets in a single sweep.
    /// Unreachable targets (or an unsnappable source) report infinity.
    pub fn costs_from(&self, from: &Point3<f64>, targets: &[Point3<f64>], v_max: f64) -> Vec<f64> {
        let mut out = vec![f64::INFINITY; targets.len()];
        let src = match self.snap(from) {
            Some(c) => c,
            None => return out,
        };
        let mut want: std::collections::HashMap<[i64; 3], Vec<usize>> = Default::default();
        let mut pending = 0usize;
        for (i, t) in targets.iter().enumerate() {
            match self.snap(t) {
                Some(c) => {
                    want.entry(c).or_default().push(i);
                    pending += 1;
                }
                None => {}
            }
        }
        let mut dist: std::collections::HashMap<[i64; 3], f64> = Default::default();
        let mut heap: BinaryHeap<(Reverse<OrdF64>, [i64; 3])> = BinaryHeap::new();
        dist.insert(src, 0.0);
        heap.push((Reverse(OrdF64(0.0)), src));
        let mut nbrs = Vec::with_capacity(10);
        while let Some((Reverse(OrdF64(g)), c)) = heap.pop() {
            if g > dist[&c] + 1e-12 {
                continue;
            }
            if let Some(ids) = want.remove(&c) {
                for i in ids {
                    out[i] = g / v_max;
                    pending -= 1;
                }
                if pending == 0 {
                    break;
                }
            }
            self.neighbors(c, &mut nbrs);
            for &(n, w) in &nbrs {
                let ng = g + w;
                if dist.get(&n).map_or(true, |&d| ng < d - 1e-12) {
                    dist.insert(n, ng);
                    heap.push((Reverse(OrdF64(ng)), n));
                }
            }
        }
        out
    }

    /// Concatenated cell-center waypoints through a sequence of points.
    pub fn path_via(&self, points: &[Point3<f64>]) -> Option<(Vec<Point3<f64>>, f64)> {
        let mut total = 0.0;
        let mut waypoints: Vec<Point3<f64>> = Vec::new();
        for pair in points.windows(2) {
            let (mut leg, len) = self.path(&pair[0], &pair[1])?;
            total += len;
            if !waypoints.is_empty() {
                leg.remove(0);
            }
            waypoints.extend(leg);
        }
        Some((waypoints, total))
    }

    /// Free cells reachable in one move: 8-connected in plane (diagonals
    /// require both orthogonal neighbors free) plus straight vertical.
    fn neighbors(&self, c: [i64; 3], out: &mut Vec<([i64; 3], f64)>) {
        out.clear();
        for dz in [-1i64, 1] {
            let n = [c[0], c[1], c[2] + dz];
            if self.is_free(n) {
                out.push((n, self.resolution));
            }
        }
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                if dx == 0 && dy == 0 {
                    continue;
                }
                let n = [c[0] + dx, c[1] + dy, c[2]];
                if !self.is_free(n) {
                    continue;
                }
                if dx != 0 && dy != 0 {
                    if !self.is_free([c[0] + dx, c[1], c[2]])
                        || !self.is_free([c[0], c[1] + dy, c[2]])
                    {
                        continue;
                    }
                    out.push((n, self.resolution * SQRT2));
                } else {
                    out.push((n, self.resolution));
                }
            }
        }
    }

    /// Snap a point to its own cell if free, otherwise the nearest free
    /// cell in the 26-neighborhood.
    pub fn snap(&self, p: &Point3<f64>) -> Option<[i64; 3]> {
        let c = self.point_to_cell(p);
        if self.is_free(c) {
            return Some(c);
        }
        let mut best: Option<(f64, [i64; 3])> = None;
        for dz in -1i64..=1 {
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let n = [c[0] + dx, c[1] + dy, c[2] + dz];
                    if !self.is_free(n) {
                        continue;
                    }
                    let d = (self.cell_center(n) - p).norm();
                    if best.map_or(true, |(bd, bc)| {
                        d < bd - 1e-12 || (d < bd + 1e-12 && n < bc)
                    }) {
                        best = Some((d, n));
                    }
                }
            }
        }
        best.map(|(_, c)| c)
    }

    /// A* shortest path between cells; octile-plus-vertical heuristic.
    /// Returns cell-center waypoints including both endpoints.
    pub fn path_cells(&self, start: [i64; 3], goal: [i64; 3]) -> Option<(Vec<[i64; 3]>, f64)> {
        if !self.is_free(start) || !self.is_free(goal) {
            return None;
        }
        let h = |c: [i64; 3]| -> f64 {
            let dx = (c[0] - goal[0]).abs() as f64;
            let dy = (c[1] - goal[1]).abs() as f64;
            let dz = (c[2] - goal[2]).abs() as f64;
            let (lo, hi) = if dx < dy { (dx, dy) } else { (dy, dx) };
            (hi - lo + lo * SQRT2 + dz) * self.resolution
        };
        let mut dist: std::collections::HashMap<[i64; 3], f64> = Default::default();
        let mut prev: std::collections::HashMap<[i64; 3], [i64; 3]> = Default::default();
        let mut heap: BinaryHeap<(Reverse<OrdF64>, [i64; 3])> = BinaryHeap::new();
        dist.insert(start, 0.0);
        heap.push((Reverse(OrdF64(h(start))), start));
        let mut nbrs = Vec::with_capacity(10);
        while let Some((Reverse(OrdF64(f)), c)) = heap.pop() {
            let g = dist[&c];
            if f > g + h(c) + 1e-12 {
                continue; // stale entry
            }
            if c == goal {
                let mut cells = vec![c];
                let mut cur = c;
                while let Some(&p) = prev.get(&cur) {
                    cells.push(p);
                    cur = p;
                }
                cells.reverse();
                return Some((cells, g));
            }
            self.neighbors(c, &mut nbrs);
            for &(n, w) in &nbrs {
                let ng = g + w;
                if dist.get(&n).map_or(true, |&d| ng < d - 1e-12) {
                    dist.insert(n, ng);
                    prev.insert(n, c);
                    heap.push((Reverse(OrdF64(ng + h(n))), n));
                }
            }
        }
        None
    }

    pub fn path(&self, from: &Point3<f64>, to: &Point3<f64>) -> Option<(Vec<Point3<f64>>, f64)> {
        let s = self.snap(from)?;
        let g = self.snap(to)?;
        let (cells, len) = self.path_cells(s, g)?;
        Some((cells.into_iter().map(|c| self.cell_center(c)).collect(), len))
    }

    /// Travel time between points at `v_max`, infinite when unreachable.
    pub fn motion_cost(&self, from: &Point3<f64>, to: &Point3<f64>, v_max: f64) -> f64 {
        match self.path(from, to) {
            Some((_, len)) => len / v_max,
            None => f64::INFINITY,
        }
    }
}

/// f64 wrapper with total ordering for the heap; ties break on the cell
/// carried next to it in the tuple.
#[derive(PartialEq, Clone, Copy, Debug)]
struct OrdF64(f64);
impl Eq for OrdF64 {}
impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}
