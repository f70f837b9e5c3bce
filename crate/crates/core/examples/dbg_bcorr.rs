use coarea_core::complex::tower::SkeletonTower;
use coarea_core::complex::Point;
use coarea_core::chains::Chain1;
use coarea_core::cones::*;
use std::sync::Arc;

fn main() {
    let t = Arc::new(
        SkeletonTower::build(4, &[0.22, 0.055], &[0.24, 0.066], &[0.27, 0.09], None).unwrap(),
    );
    let pt = |c: &[f64]| Point::from_slice(c);
    let eta = Chain1::from_endpoints(&[(
        pt(&[0.5, 0.12, 0.33, 0.0]),
        pt(&[0.5, 0.41, 0.62, 0.0]),
    )]);
    let level = t.core.n - 2;
    println!("res2 = {}", t.core.level_res(2));
    let owner = t.core.owner_cell(level, &pt(&[0.5, 0.15, 0.35, 0.0]), 1e-9).unwrap();
    println!("owner = {owner:?} box = {:?}", t.core.cell_box(level, &owner));
    let parts = partition_by_owner(&eta, &t, level);
    for (k, c) in &parts {
        println!("part {:?}: {} segs, mass {}", k, c.segments().len(), c.mass());
        for s in c.segments() {
            println!("   {:?} -> {:?}", s.a, s.b);
        }
    }
    match b_correction(&eta, &t, &owner) {
        Ok(b) => println!("B = {:?}", b.points()),
        Err(e) => println!("ERR: {e}"),
    }
}
