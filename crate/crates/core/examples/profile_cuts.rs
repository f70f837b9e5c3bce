use coarea_core::complex::tower::{ShellTarget, SkeletonTower};
use coarea_core::complex::Point;
use coarea_core::cuts::*;
use coarea_core::geometry::Target;
use std::sync::Arc;
use std::time::Instant;

fn main() {
    let t = Arc::new(
        SkeletonTower::build(4, &[0.22, 0.055], &[0.24, 0.066], &[0.27, 0.09], None).unwrap(),
    );
    let shell = ShellTarget::new(t.core.clone(), 2, t.core.schedule.eps[0]);
    println!("res2={} cap_max={} margin0~{}", t.core.level_res(2), shell.cap_max(), 0.09 + 3.0/32.0);
    // voxel list size stats
    let t0 = Instant::now();
    let mut sizes = vec![];
    for k in 0..20 {
        let p = Point::from_slice(&[0.03 + 0.04 * k as f64 % 0.8, 0.2, 0.4, 0.02]);
        let d = shell.dist_capped(&p, 0.09);
        let _ = d;
        sizes.push(shell.debug_voxel_size(&p));
    }
    println!("20 voxel lists in {:?}, sizes: {:?}", t0.elapsed(), sizes);
    let tau = random_chain(4, 3, 16);
    let seg = tau.segments()[0];
    let t1 = Instant::now();
    let prof = shell.seg_profile(&seg, &[0.01, 0.02, 0.03, 0.04, 0.05, 0.06]);
    println!("seg_profile 6 levels: {:?} in {:?}", prof, t1.elapsed());
    let t2 = Instant::now();
    let prof = shell.seg_profile(&seg, &[0.01, 0.02, 0.03, 0.04, 0.05, 0.06]);
    println!("again: {:?} in {:?}", prof, t2.elapsed());
}
