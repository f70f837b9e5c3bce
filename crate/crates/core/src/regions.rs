//! Restriction regions and exact segment clipping.
//!
//! A [`Region`] is a conjunction/disjunction tree over two primitive
//! predicates: distance bands `{lo <* dist(., A_l) <* hi}` against a tower
//! level (or a free-standing target), and retraction-fiber membership
//! `r_k(.) in union of owned cells`. Restricting a 1-chain splits each
//! segment at every primitive transition parameter and keeps the pieces
//! whose midpoints satisfy the predicate; because the transition parameters
//! are pure functions of (segment, primitive), restrictions of the same
//! chain to complementary or nested regions share their cut points exactly,
//! which is what makes partition-of-mass and telescoping identities exact.

use crate::chains::{Chain0, Chain1, Segment};
use crate::complex::tower::{CellKey, SkeletonTower};
use crate::complex::Point;
use crate::geometry::{DynTarget, Target};
use std::collections::BTreeSet;
use std::sync::Arc;

/// Inclusive/exclusive band ends. `None` means unbounded.
#[derive(Clone, Copy, Debug)]
pub struct Band {
    pub lo: Option<(f64, bool)>, // (value, strict) : dist > value (strict) or >= (non-strict)
    pub hi: Option<(f64, bool)>, // dist < value (strict) or <=
}

impl Band {
    pub fn above(v: f64, strict: bool) -> Band {
        Band { lo: Some((v, strict)), hi: None }
    }

    pub fn below(v: f64, strict: bool) -> Band {
        Band { lo: None, hi: Some((v, strict)) }
    }

    pub fn between(lo: f64, lo_strict: bool, hi: f64, hi_strict: bool) -> Band {
        Band { lo: Some((lo, lo_strict)), hi: Some((hi, hi_strict)) }
    }

    pub fn contains(&self, d: f64) -> bool {
        if let Some((v, strict)) = self.lo {
            if d < v || (strict && d == v) {
                return false;
            }
        }
        if let Some((v, strict)) = self.hi {
            if d > v || (strict && d == v) {
                return false;
            }
        }
        true
    }
}

/// A restriction region.
#[derive(Clone)]
pub enum Region {
    All,
    Empty,
    /// Distance band against a target.
    Dist { target: DynTarget, band: Band },
    /// Retraction-fiber membership at a tower level: `x in N_k` and the
    /// Borel owner of `r_k(x)` lies in `cells`.
    Fiber { tower: Arc<SkeletonTower>, level: usize, cells: Arc<BTreeSet<CellKey>> },
    /// Euclidean-ball membership (delta-admissible families).
    Balls { centers: Vec<Point>, radii: Vec<f64> },
    And(Vec<Region>),
    Or(Vec<Region>),
    Not(Box<Region>),
}

impl Region {
    pub fn dist_band(target: DynTarget, band: Band) -> Region {
        Region::Dist { target, band }
    }

    /// `M \ N_s A`: distance > s (the complement of the open neighborhood,
    /// including the level set).
    pub fn beyond_closed(target: DynTarget, s: f64) -> Region {
        Region::Dist { target, band: Band::above(s, false) }
    }

    /// `M \ closure(N_s A)`: distance > s strictly.
    pub fn beyond_open(target: DynTarget, s: f64) -> Region {
        Region::Dist { target, band: Band::above(s, true) }
    }

    pub fn contains(&self, p: &Point) -> bool {
        match self {
            Region::All => true,
            Region::Empty => false,
            Region::Dist { target, band } => {
                let cap = band
                    .hi
                    .map(|(v, _)| v)
                    .or(band.lo.map(|(v, _)| v))
                    .unwrap_or(f64::INFINITY);
                band.contains(target.dist_capped(p, cap + 1.0))
            }
            Region::Fiber { tower, level, cells } => {
                tower.fiber_owner(*level, p).map(|c| cells.contains(&c)).unwrap_or(false)
            }
            Region::Balls { centers, radii } => centers
                .iter()
                .zip(radii)
                .any(|(c, r)| p.dist(c) < *r),
            Region::And(rs) => rs.iter().all(|r| r.contains(p)),
            Region::Or(rs) => rs.iter().any(|r| r.contains(p)),
            Region::Not(r) => !r.contains(p),
        }
    }

    /// All primitive transition parameters along a segment (sorted, deduped).
    fn transitions(&self, seg: &Segment, tol: f64, out: &mut Vec<f64>) {
        match self {
            Region::All | Region::Empty => {}
            Region::Dist { target, band } => {
                for (v, _) in band.lo.iter().chain(band.hi.iter()) {
                    for (a, b) in target.seg_below(seg, *v) {
                        if a > 0.0 && a < 1.0 {
                            out.push(a);
                        }
                        if b > 0.0 && b < 1.0 {
                            out.push(b);
                        }
                    }
                }
            }
            Region::Fiber { tower, level, .. } => {
                fiber_transitions(tower, *level, seg, out);
            }
            Region::Balls { centers, radii } => {
                for (c, r) in centers.iter().zip(radii) {
                    ball_transitions(seg, c, *r, out);
                }
            }
            Region::And(rs) | Region::Or(rs) => {
                for r in rs {
                    r.transitions(seg, tol, out);
                }
            }
            Region::Not(r) => r.transitions(seg, tol, out),
        }
    }
}

fn ball_transitions(seg: &Segment, c: &Point, r: f64, out: &mut Vec<f64>) {
    // |a + t v - c|^2 = r^2
    let v = seg.b.sub(&seg.a);
    let w = seg.a.sub(c);
    let aa = Point::dot(&v, &v);
    let bb = 2.0 * Point::dot(&v, &w);
    let cc = Point::dot(&w, &w) - r * r;
    let disc = bb * bb - 4.0 * aa * cc;
    if disc <= 0.0 || aa <= 0.0 {
        return;
    }
    let sq = disc.sqrt();
    for t in [(-bb - sq) / (2.0 * aa), (-bb + sq) / (2.0 * aa)] {
        if t > 0.0 && t < 1.0 {
            out.push(t);
        }
    }
}

/// Owner-change parameters of `r_k` fibers along a segment (public hook for
/// the interpolation decomposition).
pub fn fiber_transition_params(
    tower: &SkeletonTower,
    level: usize,
    seg: &Segment,
    out: &mut Vec<f64>,
) {
    fiber_transitions(tower, level, seg, out)
}

/// Owner-change parameters of `r_k` fibers along a segment, by sampling at
/// sub-cell resolution and refining each change to 1e-12.
fn fiber_transitions(tower: &SkeletonTower, level: usize, seg: &Segment, out: &mut Vec<f64>) {
    let res = tower.core.level_res(level) as f64;
    let len = seg.length();
    let k = ((len * res * 4.0).ceil() as usize).clamp(4, 4096);
    let owner = |t: f64| tower.fiber_owner(level, &seg.eval(t));
    let mut prev_t = 0.0;
    let mut prev_o = owner(0.0);
    for i in 1..=k {
        let t = i as f64 / k as f64;
        let o = owner(t);
        if o != prev_o {
            // bisect the change point
            let (mut lo, mut hi) = (prev_t, t);
            let o_lo = prev_o.clone();
            for _ in 0..45 {
                let m = 0.5 * (lo + hi);
                if owner(m) == o_lo {
                    lo = m;
                } else {
                    hi = m;
                }
            }
            let tc = 0.5 * (lo + hi);
            if tc > 0.0 && tc < 1.0 {
                out.push(tc);
            }
        }
        prev_t = t;
        prev_o = o;
    }
}

/// Restrict a 1-chain to a region. Pieces are split at every primitive
/// transition; membership is decided at piece midpoints.
pub fn restrict(chain: &Chain1, region: &Region, tol: f64) -> Chain1 {
    let mut kept: Vec<Segment> = Vec::new();
    for seg in chain.segments() {
        let mut ts = vec![0.0, 1.0];
        region.transitions(seg, tol, &mut ts);
        ts.sort_by(|a, b| a.total_cmp(b));
        ts.dedup_by(|a, b| (*a - *b).abs() < 1e-13);
        let pts: Vec<Point> = ts.iter().map(|&t| endpoint_at(seg, t)).collect();
        for w in 0..ts.len() - 1 {
            let tm = 0.5 * (ts[w] + ts[w + 1]);
            if region.contains(&seg.eval(tm)) {
                if let Some(s) = Segment::new(pts[w], pts[w + 1]) {
                    kept.push(s);
                }
            }
        }
    }
    Chain1::from_segments(kept)
}

/// Split a 1-chain along the fibers of level `k`: returns the pieces keyed
/// by owner cell (pieces outside `N_k` keyed as `None`). The pieces always
/// reassemble to the input chain exactly.
pub fn partition_by_fibers(
    chain: &Chain1,
    tower: &Arc<SkeletonTower>,
    level: usize,
) -> Vec<(Option<CellKey>, Chain1)> {
    use std::collections::BTreeMap;
    let mut groups: BTreeMap<Option<CellKey>, Vec<Segment>> = BTreeMap::new();
    for seg in chain.segments() {
        let mut ts = vec![0.0, 1.0];
        fiber_transitions(tower, level, seg, &mut ts);
        ts.sort_by(|a, b| a.total_cmp(b));
        ts.dedup_by(|a, b| (*a - *b).abs() < 1e-13);
        let pts: Vec<Point> = ts.iter().map(|&t| endpoint_at(seg, t)).collect();
        for w in 0..ts.len() - 1 {
            let tm = 0.5 * (ts[w] + ts[w + 1]);
            let owner = tower.fiber_owner(level, &seg.eval(tm));
            if let Some(s) = Segment::new(pts[w], pts[w + 1]) {
                groups.entry(owner).or_default().push(s);
            }
        }
    }
    groups.into_iter().map(|(k, v)| (k, Chain1::from_segments(v))).collect()
}

fn endpoint_at(seg: &Segment, t: f64) -> Point {
    if t == 0.0 {
        seg.a
    } else if t == 1.0 {
        seg.b
    } else {
        seg.eval(t)
    }
}

/// Restrict a 0-chain pointwise.
pub fn restrict0(chain: &Chain0, region: &Region) -> Chain0 {
    chain.filter(|p| region.contains(p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::CubeBoundary;

    fn pt(c: &[f64]) -> Point {
        Point::from_slice(c)
    }

    #[test]
    fn restrict_vertical_segment_against_boundary_collar() {
        // vertical segment x=0.3 in [0,1]^2, y in [0,1]; M \ N_273 Sigma with s=0.2
        // -> y in [0.2, 0.8], mass 0.6
        let tau = Chain1::from_endpoints(&[(pt(&[0.3, 0.0]), pt(&[0.3, 1.0]))]);
        let target: DynTarget = Arc::new(CubeBoundary { n: 2 });
        let omega = Region::beyond_closed(target, 0.2);
        let r = restrict(&tau, &omega, 1e-9);
        assert_eq!(r.segments().len(), 1);
        assert!((r.mass() - 0.6).abs() < 1e-12);
        let s = r.segments()[0];
        assert!((s.a.coord(1) - 0.2).abs() < 1e-12 && (s.b.coord(1) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn restrict_to_all_is_identity_and_outside_is_empty() {
        let tau = Chain1::from_endpoints(&[(pt(&[0.3, 0.4]), pt(&[0.6, 0.6]))]);
        assert_eq!(restrict(&tau, &Region::All, 1e-9), tau);
        let target: DynTarget = Arc::new(CubeBoundary { n: 2 });
        // tau is supported at depth >= 0.3; demand depth <= 0.1
        let omega = Region::Dist { target, band: Band::below(0.1, false) };
        assert!(restrict(&tau, &omega, 1e-9).is_empty());
    }

    #[test]
    fn partition_of_mass() {
        let tau = Chain1::from_endpoints(&[
            (pt(&[0.1, 0.05]), pt(&[0.8, 0.9])),
            (pt(&[0.5, 0.02]), pt(&[0.5, 0.97])),
        ]);
        let target: DynTarget = Arc::new(CubeBoundary { n: 2 });
        let omega = Region::beyond_closed(target.clone(), 0.17);
        let inside = restrict(&tau, &omega, 1e-9);
        let outside = restrict(&tau, &Region::Not(Box::new(omega)), 1e-9);
        assert!((inside.mass() + outside.mass() - tau.mass()).abs() < 1e-9);
        // and the two halves reassemble exactly
        assert_eq!(inside.add(&outside), tau);
    }

    #[test]
    fn restriction_boundary_law_against_dense_oracle() {
        // boundary(tau|Omega) = boundary(tau)|Omega + crossing points
        let tau = Chain1::from_endpoints(&[(pt(&[0.5, 0.02]), pt(&[0.5, 0.6]))]);
        let target: DynTarget = Arc::new(CubeBoundary { n: 2 });
        let s = 0.23;
        let omega = Region::beyond_closed(target.clone(), s);
        let clipped = restrict(&tau, &omega, 1e-9);
        let bd = clipped.boundary();
        // dense-subdivision oracle: classify 10^4 pieces
        let seg = tau.segments()[0];
        let mut oracle_pts = Vec::new();
        let n_pieces = 10_000;
        let mut prev_in = None;
        for i in 0..n_pieces {
            let tm = (i as f64 + 0.5) / n_pieces as f64;
            let inside = omega.contains(&seg.eval(tm));
            if let Some(pi) = prev_in {
                if pi != inside {
                    oracle_pts.push(seg.eval(i as f64 / n_pieces as f64));
                }
            }
            prev_in = Some(inside);
        }
        // boundary endpoints inside the region
        for p in [seg.a, seg.b] {
            if omega.contains(&p) {
                oracle_pts.push(p);
            }
        }
        assert_eq!(bd.points().len(), oracle_pts.len());
        for (got, want) in bd.points().iter().zip(oracle_pts.iter()) {
            assert!(got.dist(want) < 1e-3);
        }
    }
}
