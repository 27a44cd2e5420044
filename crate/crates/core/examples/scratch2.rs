use starfront_core::config::Params;
use starfront_core::envlib::EnvLibrary;
use starfront_core::grid_path::KnownGrid;
use starfront_core::meshtable::MeshTable;
use starfront_core::scenario::Scenario;
use starfront_core::starconvex::{build_polytope, sample_frame, VertexTag};

fn main() {
    let mut sc = Scenario::standard(25.0, 25.0, 2, 2);
    sc.world.size_m = [25.0, 25.0, 2.0];
    let (world, robots) = sc.build(1).unwrap();
    let params: Params = sc.params.clone();
    for r in &robots {
        println!(
            "robot {} at ({:.2},{:.2},{:.2})",
            r.id, r.position.x, r.position.y, r.position.z
        );
        let samples = sample_frame(&world, r, &params.polytope).unwrap();
        println!("  free={} obs={}", samples.free.len(), samples.obs.len());
        let mut lib = EnvLibrary::new(r.id);
        let id = lib.alloc_polytope_id();
        let flip_r = params.polytope.flip_radius_factor * r.sensor_range;
        let poly = build_polytope(&samples, &r.position, flip_r, id).unwrap();
        let nfree = poly
            .vertices
            .iter()
            .filter(|(_, t)| *t == VertexTag::Free)
            .count();
        println!(
            "  poly verts={} (free {nfree}) meshes={}",
            poly.vertices.len(),
            poly.meshes.len()
        );
        let table = MeshTable::build(&poly, params.sfi.meshtable_cell_deg);
        let pdims = [
            (sc.world.size_m[0] / sc.world.planning_resolution).round() as usize,
            (sc.world.size_m[1] / sc.world.planning_resolution).round() as usize,
        ];
        let mut grid = KnownGrid::new_planar(pdims, sc.world.planning_resolution, sc.mid_z());
        let fresh = grid.mark_polytope_collect(&poly, &table);
        println!("  grid cells marked: {}", fresh.len());
        lib.insert_polytope(poly, &params).unwrap();
        println!("  frontiers={}", lib.frontiers.len());
        lib.refresh_sfi(&params, r.sensor_range);
        println!("  clusters={} svps={}", lib.clusters.len(), lib.svps.len());
        for s in &lib.svps {
            let cost = grid.motion_cost(&r.position, &s.position, r.v_max);
            let cell = grid.point_to_cell(&s.position);
            println!(
                "  svp {} at ({:.2},{:.2},{:.2}) cost={:.2} cell={:?} free={}",
                s.id,
                s.position.x,
                s.position.y,
                s.position.z,
                cost,
                cell,
                grid.is_free(cell)
            );
        }
    }
}
