//! Mod-2 piecewise-linear chain algebra on the flat cube `[0,1]^n`, together
//! with the machinery built on top of it: a tower of boundary skeleta at
//! decreasing widths, multi-scale coarea cuts against that tower, cone and
//! rescaling operators, and the skeleton-by-skeleton construction of a
//! regularized family with certified mass and boundary-mass bounds.
//!
//! The crate is organized to mirror the pipeline:
//!
//! * [`complex`] — Euclidean simplicial complexes, cubical parameter
//!   complexes and the [`complex::tower::SkeletonTower`].
//! * [`chains`] — exact mod-2 algebra of PL 0- and 1-chains.
//! * [`geometry`] — distance fields, the cube collar, radial retractions and
//!   chain pushforwards with length certificates.
//! * [`regions`] — restriction regions (distance bands, retraction fibers)
//!   and exact segment clipping.
//! * [`cuts`] — admissible coarea cuts, the cut operators, boundary
//!   decompositions, shell telescoping and cell localization.
//! * [`cones`] — cone operators transferring boundary mass to cell centers.
//! * [`interpolation`] — rescaling coefficients, homothety stacks and the
//!   interpolated chains with their mass certificates.
//! * [`sweep`] — schedules, per-vertex cuts and the inductive extension of
//!   the family over a cubical complex, plus the final bound checks.
//! * [`harness`] — example generators, verification suites and reports.

pub mod chains;
pub mod complex;
pub mod cones;
pub mod cuts;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod interpolation;
pub mod regions;
pub mod sweep;

pub use chains::{Chain0, Chain1, Segment};
pub use complex::{CubicalComplex, EuclideanComplex, Point};
pub use error::{Error, Result};

/// Initialize the global rayon pool honoring `COAREA_LAB_THREADS`.
///
/// Safe to call more than once; only the first call wins.
pub fn init_parallelism() {
    if let Ok(v) = std::env::var("COAREA_LAB_THREADS") {
        if let Ok(k) = v.parse::<usize>() {
            if k >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(k).build_global();
            }
        }
    }
}
