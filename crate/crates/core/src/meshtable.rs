//! MeshTable: rasterized-unit-sphere index from spherical cells to candidate
//! meshes, for fast point-in-polytope queries.

use crate::starconvex::StarPolytope;
use nalgebra::{Point3, Vector3};
use std::f64::consts::{PI, TAU};

/// Per-polytope index. Each raster cell lists the meshes whose (padded)
/// spherical AABB covers it; azimuth wraparound is handled by splitting the
/// box in two.
#[derive(Debug, Clone)]
pub struct MeshTable {
    n_az: usize,
    n_inc: usize,
    cells: Vec<Vec<u32>>,
    /// Largest vertex distance from the origin; nothing inside the star
    /// mesh lies farther out.
    pub reach: f64,
}

fn spherical(origin: &Point3<f64>, p: &Point3<f64>) -> (f64, f64) {
    let v: Vector3<f64> = p - origin;
    let az = v.y.atan2(v.x); // [-pi, pi]
    let inc = (v.z / v.norm().max(1e-300)).clamp(-1.0, 1.0).acos(); // [0, pi]
    (az, inc)
}

impl MeshTable {
    pub fn build(poly: &StarPolytope, cell_deg: f64) -> Self {
        let cell = cell_deg.to_radians();
        let n_az = (TAU / cell).ceil() as usize;
        let n_inc = (PI / cell).ceil() as usize;
        let mut table = MeshTable {
            n_az,
            n_inc,
            cells: vec![Vec::new(); n_az * n_inc],
            reach: poly.max_radius(),
        };
        for (mi, mesh) in poly.meshes.iter().enumerate() {
            let pts: Vec<(f64, f64)> = mesh
                .iter()
                .map(|&vi| spherical(&poly.origin, &poly.vertices[vi as usize].0))
                .collect();
            // Pad by half the largest angular edge, so arcs between the
            // vertices cannot escape the box, plus one cell of slack.
            let mut max_arc: f64 = 0.0;
            for a in 0..3 {
                for b in (a + 1)..3 {
                    let va = (poly.vertices[mesh[a] as usize].0 - poly.origin).normalize();
                    let vb = (poly.vertices[mesh[b] as usize].0 - poly.origin).normalize();
                    max_arc = max_arc.max(va.dot(&vb).clamp(-1.0, 1.0).acos());
                }
            }
            let pad = max_arc / 2.0 + cell;

            let inc_lo = pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min) - pad;
            let inc_hi = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max) + pad;

            // Azimuth is meaningless near the poles; cover all of it there.
            let polar = inc_lo <= cell || inc_hi >= PI - cell;
            let az_spans: Vec<(f64, f64)> = if polar {
                vec![(-PI, PI)]
            } else {
                let azs: Vec<f64> = pts.iter().map(|p| p.0).collect();
                let (lo, hi) = azimuth_interval(&azs);
                let (lo, hi) = (lo - pad, hi + pad);
                if hi - lo >= TAU {
                    vec![(-PI, PI)]
                } else if lo < -PI {
                    vec![(-PI, hi), (lo + TAU, PI)]
                } else if hi > PI {
                    vec![(-PI, hi - TAU), (lo, PI)]
                } else {
                    vec![(lo, hi)]
                }
            };

            let i_lo = ((inc_lo / PI * table.n_inc as f64).floor() as i64).max(0) as usize;
            let i_hi =
                ((inc_hi / PI * table.n_inc as f64).ceil() as i64).min(table.n_inc as i64 - 1);
            if i_hi < 0 {
                continue;
            }
            for (az_lo, az_hi) in az_spans {
                let a_lo = (((az_lo + PI) / TAU * table.n_az as f64).floor() as i64).max(0) as usize;
                let a_hi = (((az_hi + PI) / TAU * table.n_az as f64).ceil() as i64)
                    .min(table.n_az as i64 - 1);
                for ii in i_lo..=(i_hi as usize) {
                    for ai in a_lo..=(a_hi as usize) {
                        table.cells[ii * table.n_az + ai].push(mi as u32);
                    }
                }
            }
        }
        table
    }

    fn cell_of(&self, az: f64, inc: f64) -> usize {
        let ai = (((az + PI) / TAU * self.n_az as f64).floor() as i64)
            .clamp(0, self.n_az as i64 - 1) as usize;
        let ii =
            ((inc / PI * self.n_inc as f64).floor() as i64).clamp(0, self.n_inc as i64 - 1) as usize;
        ii * self.n_az + ai
    }

    /// True iff `p` lies inside the tetrahedron of some candidate mesh of
    /// `poly`, with tolerance `eps` meters.
    pub fn contains(&self, poly: &StarPolytope, p: &Point3<f64>, eps: f64) -> bool {
        let v: Vector3<f64> = p - poly.origin;
        if v.norm() < 1e-9 {
            return true;
        }
        if v.norm() > self.reach + eps {
            return false;
        }
        let (az, inc) = spherical(&poly.origin, p);
        self.cells[self.cell_of(az, inc)]
            .iter()
            .any(|&mi| poly.tetra_contains(&poly.meshes[mi as usize], p, eps))
    }
}

/// Smallest interval (on the circle, endpoints in radians) covering all the
/// given azimuths; returned as (lo, hi) with hi - lo <= pi for small meshes,
/// possibly crossing the +-pi seam.
fn azimuth_interval(azs: &[f64]) -> (f64, f64) {
    // Try each value as interval start and keep the tightest cover.
    let mut best = (azs[0], azs[0] + TAU);
    for &start in azs {
        let mut hi = start;
        for &a in azs {
            let mut d = a - start;
            while d < 0.0 {
                d += TAU;
            }
            while d >= TAU {
                d -= TAU;
            }
            hi = hi.max(start + d);
        }
        if hi - start < best.1 - best.0 {
            best = (start, hi);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::starconvex::{build_polytope, SamplePointSets};
    use rand::{Rng, SeedableRng};
    use std::f64::consts::TAU;

    fn fixture_polytope(seed: u64) -> StarPolytope {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let origin = Point3::new(0.0, 0.0, 0.0);
        let mut samples = SamplePointSets::default();
        for i in 0..36 {
            for j in 0..8 {
                let az = TAU * i as f64 / 36.0;
                let inc = PI * (j as f64 + 0.5) / 8.0;
                let r = rng.gen_range(3.0..9.0);
                let dir = Vector3::new(inc.sin() * az.cos(), inc.sin() * az.sin(), inc.cos());
                samples.free.push(origin + dir * r);
            }
        }
        build_polytope(&samples, &origin, 20.0, seed).unwrap()
    }

    #[test]
    fn origin_is_inside() {
        let poly = fixture_polytope(1);
        let table = MeshTable::build(&poly, 2.0);
        assert!(table.contains(&poly, &poly.origin, 0.0));
    }

    #[test]
    fn far_point_is_outside() {
        let poly = fixture_polytope(2);
        let table = MeshTable::build(&poly, 2.0);
        let far = poly.origin + Vector3::new(2.0 * poly.max_radius(), 0.0, 0.0);
        assert!(!table.contains(&poly, &far, 0.0));
    }

    #[test]
    fn query_matches_brute_force() {
        // 1e4 random points per fixture must agree exactly with the
        // all-tetrahedra membership oracle.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for seed in 0..4 {
            let poly = fixture_polytope(100 + seed);
            let table = MeshTable::build(&poly, 2.0);
            for _ in 0..10_000 {
                let p = Point3::new(
                    rng.gen_range(-10.0..10.0),
                    rng.gen_range(-10.0..10.0),
                    rng.gen_range(-10.0..10.0),
                );
                assert_eq!(
                    table.contains(&poly, &p, 0.0),
                    poly.contains_point_brute(&p, 0.0),
                    "mismatch at {p:?}"
                );
            }
        }
    }
}
