use nalgebra::Point3;
use starfront_core::scenario::Scenario;

fn main() {
    let sc = Scenario::standard(25.0, 25.0, 1, 2);
    let (world, robots) = sc.build(1).unwrap();
    println!("robot start {:?}", robots[0].position);
    for y in [7.0, 8.0, 9.0, 10.0, 10.25, 11.0, 11.75, 12.0] {
        let mut row = String::new();
        for xi in 0..14 {
            let x = 18.0 + 0.25 * xi as f64;
            let p = Point3::new(x, y, 0.83);
            row.push(if world.occupied_at(&p) { '#' } else { '.' });
        }
        println!("y={y:>5}: x18..21.25 {row}");
    }
    // vertical column at the probe
    for zi in 0..8 {
        let z = 0.25 * zi as f64;
        let p = Point3::new(19.9, 10.14, z);
        println!("z={z}: occ={}", world.occupied_at(&p));
    }
}
