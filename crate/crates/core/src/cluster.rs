//! Spectral clustering of frontier meshes.
//!
//! Similarity combines a tangential distance, a normal distance, and a
//! normal-difference term; the kernelized matrix plus a kNN degree matrix
//! feed an eigengap-selected spectral partition. Cluster count is raised
//! until no cluster exceeds the configured spatial extent.

use crate::config::SfiParams;
use crate::frontier::FrontierMesh;
use nalgebra::DMatrix;

/// Distance along the normal of the second mesh.
pub fn dist_tangential(a: &FrontierMesh, b: &FrontierMesh) -> f64 {
    (a.center - b.center).dot(&b.normal).abs()
}

/// Distance across the normal of the second mesh.
pub fn dist_normal(a: &FrontierMesh, b: &FrontierMesh) -> f64 {
    (a.center - b.center).cross(&b.normal).norm()
}

/// Half the chord between unit normals: 0 for equal, 1 for opposite.
pub fn normal_difference(a: &FrontierMesh, b: &FrontierMesh) -> f64 {
    ((a.normal - b.normal) / 2.0).norm()
}

fn weighted_distance(a: &FrontierMesh, b: &FrontierMesh, p: &SfiParams) -> f64 {
    p.w_tangential * dist_tangential(a, b)
        + p.w_normal * dist_normal(a, b)
        + p.w_delta * normal_difference(a, b)
}

/// Symmetrized weighted distance; the raw form is asymmetric in (i, j).
pub fn pair_distance(a: &FrontierMesh, b: &FrontierMesh, p: &SfiParams) -> f64 {
    0.5 * (weighted_distance(a, b, p) + weighted_distance(b, a, p))
}

/// Cluster the given frontiers. Returns disjoint index groups covering
/// 0..n, each sorted, ordered by smallest member index.
pub fn cluster_frontiers(frontiers: &[FrontierMesh], params: &SfiParams) -> Vec<Vec<usize>> {
    let n = frontiers.len();
    if n == 0 {
        return Vec::new();
    }
    if n == 1 {
        return vec![vec![0]];
    }

    // Similarity kernel.
    let mut sim = DMatrix::zeros(n, n);
    for i in 0..n {
        sim[(i, i)] = 1.0;
        for j in (i + 1)..n {
            let s = pair_distance(&frontiers[i], &frontiers[j], params);
            let v = (-s * s / (2.0 * params.sigma * params.sigma)).exp();
            sim[(i, j)] = v;
            sim[(j, i)] = v;
        }
    }

    // Degree matrix from the symmetric kNN graph on centers.
    let k = params.knn.min(n - 1);
    let mut adj = vec![vec![false; n]; n];
    for i in 0..n {
        let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        order.sort_by(|&a, &b| {
            (frontiers[a].center - frontiers[i].center)
                .norm_squared()
                .total_cmp(&(frontiers[b].center - frontiers[i].center).norm_squared())
                .then(a.cmp(&b))
        });
        for &j in order.iter().take(k) {
            adj[i][j] = true;
            adj[j][i] = true;
        }
    }
    let mut lap = -sim.clone();
    for i in 0..n {
        let deg = adj[i].iter().filter(|&&e| e).count() as f64;
        lap[(i, i)] += deg + sim[(i, i)];
    }

    let eig = nalgebra::SymmetricEigen::new(lap);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(a.cmp(&b)));
    let lambdas: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();

    // Columns of the embedding, sign-fixed for determinism.
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n);
    for &col in &order {
        let mut v: Vec<f64> = (0..n).map(|r| eig.eigenvectors[(r, col)]).collect();
        if let Some(first) = v.iter().find(|x| x.abs() > 1e-12) {
            if *first < 0.0 {
                for x in &mut v {
                    *x = -*x;
                }
            }
        }
        basis.push(v);
    }

    // Eigengap choice of k, then grow while a cluster is too spread out.
    let kmax = n.min(16);
    let mut best_k = 1;
    let mut best_gap = f64::NEG_INFINITY;
    for c in 1..kmax.min(lambdas.len()) {
        let gap = lambdas[c] - lambdas[c - 1];
        if gap > best_gap {
            best_gap = gap;
            best_k = c;
        }
    }

    let mut kk = best_k;
    loop {
        let groups = kmeans_rows(&basis, frontiers.len(), kk);
        let too_wide = groups.iter().any(|g| cluster_radius(frontiers, g) > params.cluster_extent_max);
        if !too_wide || kk >= n {
            let mut out: Vec<Vec<usize>> = groups.into_iter().filter(|g| !g.is_empty()).collect();
            for g in &mut out {
                g.sort_unstable();
            }
            out.sort_by_key(|g| g[0]);
            return out;
        }
        kk += 1;
    }
}

fn cluster_radius(frontiers: &[FrontierMesh], group: &[usize]) -> f64 {
    if group.is_empty() {
        return 0.0;
    }
    let mut c = nalgebra::Vector3::zeros();
    for &i in group {
        c += frontiers[i].center.coords;
    }
    c /= group.len() as f64;
    group
        .iter()
        .map(|&i| (frontiers[i].center.coords - c).norm())
        .fold(0.0, f64::max)
}

/// Deterministic k-means over the first `k` embedding coordinates:
/// farthest-first seeding, ties to the lowest index.
fn kmeans_rows(basis: &[Vec<f64>], n: usize, k: usize) -> Vec<Vec<usize>> {
    let dim = k.min(basis.len());
    let row = |i: usize| -> Vec<f64> { (0..dim).map(|d| basis[d][i]).collect() };
    let dist2 = |a: &[f64], b: &[f64]| -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
    };

    let mut centers: Vec<Vec<f64>> = vec![row(0)];
    while centers.len() < k {
        let far = (0..n)
            .max_by(|&a, &b| {
                let da = centers.iter().map(|c| dist2(c, &row(a))).fold(f64::INFINITY, f64::min);
                let db = centers.iter().map(|c| dist2(c, &row(b))).fold(f64::INFINITY, f64::min);
                da.total_cmp(&db).then(b.cmp(&a))
            })
            .unwrap();
        centers.push(row(far));
    }

    let mut assign = vec![0usize; n];
    for _ in 0..100 {
        let mut changed = false;
        for i in 0..n {
            let r = row(i);
            let best = (0..centers.len())
                .min_by(|&a, &b| {
                    dist2(&centers[a], &r)
                        .total_cmp(&dist2(&centers[b], &r))
                        .then(a.cmp(&b))
                })
                .unwrap();
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
        }
        let mut sums = vec![vec![0.0; dim]; centers.len()];
        let mut counts = vec![0usize; centers.len()];
        for i in 0..n {
            let r = row(i);
            for d in 0..dim {
                sums[assign[i]][d] += r[d];
            }
            counts[assign[i]] += 1;
        }
        for c in 0..centers.len() {
            if counts[c] > 0 {
                for d in 0..dim {
                    centers[c][d] = sums[c][d] / counts[c] as f64;
                }
            }
        }
        if !changed {
            break;
        }
    }

    let mut groups = vec![Vec::new(); k];
    for i in 0..n {
        groups[assign[i]].push(i);
    }
    groups
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Point3, Vector3};

    fn mesh(id: u64, center: Point3<f64>, normal: Vector3<f64>) -> FrontierMesh {
        FrontierMesh {
            id,
            polytope_id: 0,
            center,
            normal: normal.normalize(),
            vertices: [center, center, center],
        }
    }

    #[test]
    fn identical_meshes_one_cluster() {
        let p = SfiParams::default();
        let a = mesh(1, Point3::origin(), Vector3::x());
        let b = mesh(2, Point3::origin(), Vector3::x());
        assert_eq!(pair_distance(&a, &b, &p), 0.0);
        let groups = cluster_frontiers(&[a, b], &p);
        assert_eq!(groups, vec![vec![0, 1]]);
    }

    #[test]
    fn normal_difference_bounds() {
        let a = mesh(1, Point3::origin(), Vector3::x());
        let b = mesh(2, Point3::origin(), -Vector3::x());
        let c = mesh(3, Point3::origin(), Vector3::x());
        assert!((normal_difference(&a, &b) - 1.0).abs() < 1e-12);
        assert!(normal_difference(&a, &c).abs() < 1e-12);
    }

    #[test]
    fn single_frontier_singleton_cluster() {
        let groups = cluster_frontiers(
            &[mesh(1, Point3::origin(), Vector3::x())],
            &SfiParams::default(),
        );
        assert_eq!(groups, vec![vec![0]]);
    }

    #[test]
    fn two_perpendicular_walls_split_cleanly() {
        // 20 coplanar meshes on each of two perpendicular walls 5 m apart.
        // Oracle: connected components under a threshold on the pairwise
        // distance s.
        let p = SfiParams::default();
        let mut frontiers = Vec::new();
        for i in 0..20 {
            // Wall A: x = 0 plane, normal +x, centers spread in y.
            frontiers.push(mesh(
                i,
                Point3::new(0.0, 0.2 * i as f64, 1.0),
                Vector3::x(),
            ));
        }
        for i in 0..20 {
            // Wall B: y = 5 plane, normal -y.
            frontiers.push(mesh(
                20 + i,
                Point3::new(0.5 + 0.2 * i as f64, 5.0, 1.0),
                -Vector3::y(),
            ));
        }

        // Threshold connected-components oracle.
        let n = frontiers.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut Vec<usize>, i: usize) -> usize {
            if p[i] != i {
                let r = find(p, p[i]);
                p[i] = r;
            }
            p[i]
        }
        for i in 0..n {
            for j in (i + 1)..n {
                if pair_distance(&frontiers[i], &frontiers[j], &p) < 1.0 {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    if a != b {
                        parent[a] = b;
                    }
                }
            }
        }
        let roots: std::collections::BTreeSet<usize> =
            (0..n).map(|i| find(&mut parent, i)).collect();
        assert_eq!(roots.len(), 2, "oracle should see two components");

        let groups = cluster_frontiers(&frontiers, &p);
        assert_eq!(groups.len(), 2, "expected two clusters, got {groups:?}");
        for g in &groups {
            let wall_a = g.iter().filter(|&&i| i < 20).count();
            assert!(
                wall_a == 0 || wall_a == g.len(),
                "cluster mixes walls: {g:?}"
            );
        }
    }

    #[test]
    fn self_distance_zero_kernel_one() {
        let p = SfiParams::default();
        let a = mesh(1, Point3::new(3.0, -2.0, 1.0), Vector3::new(1.0, 2.0, 0.5));
        assert_eq!(pair_distance(&a, &a, &p), 0.0);
    }

    #[test]
    fn clustering_is_deterministic() {
        let p = SfiParams::default();
        let mut frontiers = Vec::new();
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for i in 0..40 {
            frontiers.push(mesh(
                i,
                Point3::new(
                    rng.gen_range(-10.0..10.0),
                    rng.gen_range(-10.0..10.0),
                    rng.gen_range(0.0..2.0),
                ),
                Vector3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-0.2..0.2),
                ),
            ));
        }
        let a = cluster_frontiers(&frontiers, &p);
        let b = cluster_frontiers(&frontiers, &p);
        assert_eq!(a, b);
    }
}
