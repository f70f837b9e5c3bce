//! Distance fields to PL targets, offset level sets, the cube collar, radial
//! retractions `S(A, eps, eps_bar)` and their stacks, and pushforward of
//! chains with certified length control.

use crate::chains::{Chain1, Segment};
use crate::complex::{EuclideanComplex, Point, MAX_DIM};
use crate::error::{Error, Result};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

/// Count of nearest-point queries that hit a medial-axis tie (two candidate
/// features within 1e-12). Surfaced in reports; see module docs.
pub static MEDIAL_FLAGS: AtomicU64 = AtomicU64::new(0);

pub fn take_medial_flags() -> u64 {
    MEDIAL_FLAGS.swap(0, Ordering::Relaxed)
}

#[derive(Clone, Copy, Debug)]
pub struct Nearest {
    pub dist: f64,
    pub point: Point,
}

/// A closed PL target supporting distance queries and segment/offset
/// intersections. `D_s A = {dist = s}`, `N_s A = {dist < s}`.
pub trait Target: Send + Sync {
    fn ambient_dim(&self) -> usize;

    /// Exact distance when below `cap`; any value `>= cap` may be returned
    /// for far points (lets implicit targets stay local).
    fn dist_capped(&self, p: &Point, cap: f64) -> f64;

    fn dist(&self, p: &Point) -> f64 {
        self.dist_capped(p, f64::INFINITY)
    }

    /// Distance and witness point, when within `cap`.
    fn nearest_within(&self, p: &Point, cap: f64) -> Option<Nearest>;

    /// Merged parameter intervals `{t in [0,1]: dist(seg(t)) <= s}`.
    ///
    /// Default: certified refinement driven by the 1-Lipschitz property of
    /// the distance along the segment; exact overrides where closed forms
    /// exist.
    fn seg_below(&self, seg: &Segment, s: f64) -> Vec<(f64, f64)> {
        lipschitz_seg_below(&|p| self.dist_capped(p, s + 2.0 * seg.length() + 1.0), seg, s)
    }

    /// Transversal crossing counts of the segment with `{dist = s}` for a
    /// batch of levels; the default runs `seg_below` per level.
    fn seg_profile(&self, seg: &Segment, svals: &[f64]) -> Vec<u64> {
        svals
            .iter()
            .map(|&s| {
                let mut c = 0u64;
                for (a, b) in self.seg_below(seg, s) {
                    if a > 0.0 && a < 1.0 {
                        c += 1;
                    }
                    if b > 0.0 && b < 1.0 {
                        c += 1;
                    }
                }
                c
            })
            .collect()
    }

    /// Lower bound for the distance anywhere on the segment (conservative);
    /// used to prune identity regions soundly.
    fn seg_dist_lower_bound(&self, seg: &Segment) -> f64 {
        let cap = f64::INFINITY;
        let da = self.dist_capped(&seg.a, cap);
        let db = self.dist_capped(&seg.b, cap);
        // dist is 1-Lipschitz along the segment
        ((da + db - seg.length()) / 2.0).max(0.0)
    }
}

/// Intervals `{t: d(seg(t)) <= s}` for a 1-Lipschitz (in space) distance
/// function, by certified interval refinement: a bracket is discarded only
/// when the Lipschitz bound proves it cannot meet the level.
pub fn lipschitz_seg_below(
    d: &dyn Fn(&Point) -> f64,
    seg: &Segment,
    s: f64,
) -> Vec<(f64, f64)> {
    let len = seg.length();
    if len <= 0.0 {
        return Vec::new();
    }
    let f = |t: f64| d(&seg.eval(t)) - s;
    let mut events: Vec<(f64, bool)> = Vec::new(); // (t, below?) transitions
    let fa = f(0.0);
    let fb = f(1.0);
    refine_below(&f, 0.0, fa, 1.0, fb, len, &mut events);
    // reconstruct intervals from transition points + endpoint signs
    let mut ivs = Vec::new();
    let mut below = fa <= 0.0;
    let mut start = if below { Some(0.0) } else { None };
    for &(t, now_below) in &events {
        if now_below && !below {
            start = Some(t);
        } else if !now_below && below {
            if let Some(s0) = start.take() {
                ivs.push((s0, t));
            }
        }
        below = now_below;
    }
    if below {
        if let Some(s0) = start {
            ivs.push((s0, 1.0));
        }
    }
    merge_intervals(ivs)
}

/// Public hook for specialized profile routines.
pub fn refine_below_pub(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    fa: f64,
    b: f64,
    fb: f64,
    len: f64,
    out: &mut Vec<(f64, bool)>,
) {
    refine_below(f, a, fa, b, fb, len, out)
}

fn refine_below(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    fa: f64,
    b: f64,
    fb: f64,
    len: f64,
    out: &mut Vec<(f64, bool)>,
) {
    let width = (b - a) * len;
    // Lipschitz pruning: no sign change possible inside
    if fa > 0.0 && fb > 0.0 && fa + fb > width {
        return;
    }
    if fa <= 0.0 && fb <= 0.0 && -(fa + fb) > width {
        return;
    }
    if width < 1e-12 || (b - a) < 1e-13 {
        if (fa <= 0.0) != (fb <= 0.0) {
            out.push((0.5 * (a + b), fb <= 0.0));
        }
        return;
    }
    let m = 0.5 * (a + b);
    let fm = f(m);
    refine_below(f, a, fa, m, fm, len, out);
    refine_below(f, m, fm, b, fb, len, out);
}

pub type DynTarget = Arc<dyn Target>;

// --- cube boundary ---------------------------------------------------------

/// The boundary of the unit cube; distances are exact closed forms.
pub struct CubeBoundary {
    pub n: usize,
}

impl CubeBoundary {
    pub fn depth(p: &Point) -> f64 {
        p.coords().iter().map(|&x| x.min(1.0 - x)).fold(f64::INFINITY, f64::min)
    }
}

impl Target for CubeBoundary {
    fn ambient_dim(&self) -> usize {
        self.n
    }

    fn dist_capped(&self, p: &Point, _cap: f64) -> f64 {
        Self::depth(p).max(0.0)
    }

    fn nearest_within(&self, p: &Point, _cap: f64) -> Option<Nearest> {
        let d = self.dist(p);
        let mut best_axis = 0usize;
        let mut best_side = 0.0;
        let mut best = f64::INFINITY;
        let mut ties = 0;
        for i in 0..self.n {
            for (side, v) in [(0.0, p.coord(i)), (1.0, 1.0 - p.coord(i))] {
                if (v - best).abs() < 1e-12 {
                    ties += 1;
                } else if v < best {
                    best = v;
                    best_axis = i;
                    best_side = side;
                    ties = 0;
                }
            }
        }
        if ties > 0 {
            MEDIAL_FLAGS.fetch_add(1, Ordering::Relaxed);
        }
        let mut c = p.coords().to_vec();
        c[best_axis] = best_side;
        Some(Nearest { dist: d, point: Point::from_slice(&c) })
    }

    fn seg_below(&self, seg: &Segment, s: f64) -> Vec<(f64, f64)> {
        // dist = min over 2n affine functions of t; {min <= s} = union of
        // per-function intervals, each solved exactly.
        let mut ivs = Vec::new();
        let a = seg.a.coords();
        let b = seg.b.coords();
        for i in 0..self.n {
            for side in 0..2 {
                let (va, vb) = if side == 0 {
                    (a[i], b[i])
                } else {
                    (1.0 - a[i], 1.0 - b[i])
                };
                // affine va + t(vb-va) <= s
                affine_below(va, vb, s, &mut ivs);
            }
        }
        merge_intervals(ivs)
    }
}

fn affine_below(va: f64, vb: f64, s: f64, out: &mut Vec<(f64, f64)>) {
    let d = vb - va;
    if d.abs() < 1e-300 {
        if va <= s {
            out.push((0.0, 1.0));
        }
        return;
    }
    let t = (s - va) / d;
    let (lo, hi) = if d < 0.0 { (t, 1.0) } else { (0.0, t) };
    let lo = lo.max(0.0);
    let hi = hi.min(1.0);
    if lo < hi {
        out.push((lo, hi));
    }
}

pub fn merge_intervals(mut ivs: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    if ivs.is_empty() {
        return ivs;
    }
    ivs.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(ivs.len());
    for (lo, hi) in ivs {
        if let Some(last) = out.last_mut() {
            if lo <= last.1 {
                last.1 = last.1.max(hi);
                continue;
            }
        }
        out.push((lo, hi));
    }
    out
}

// --- axis boxes -------------------------------------------------------------

/// Axis-aligned box, possibly degenerate along some axes.
#[derive(Clone, Copy, Debug)]
pub struct AABox {
    pub n: usize,
    pub lo: [f64; MAX_DIM],
    pub hi: [f64; MAX_DIM],
}

impl AABox {
    pub fn new(lo: &[f64], hi: &[f64]) -> AABox {
        let n = lo.len();
        let mut l = [0.0; MAX_DIM];
        let mut h = [0.0; MAX_DIM];
        l[..n].copy_from_slice(lo);
        h[..n].copy_from_slice(hi);
        AABox { n, lo: l, hi: h }
    }

    pub fn dist(&self, p: &Point) -> f64 {
        let mut s = 0.0;
        for i in 0..self.n {
            let x = p.coord(i);
            let d = if x < self.lo[i] {
                self.lo[i] - x
            } else if x > self.hi[i] {
                x - self.hi[i]
            } else {
                0.0
            };
            s += d * d;
        }
        s.sqrt()
    }

    pub fn clamp(&self, p: &Point) -> Point {
        let mut c = [0.0; MAX_DIM];
        for i in 0..self.n {
            c[i] = p.coord(i).clamp(self.lo[i], self.hi[i]);
        }
        Point::from_slice(&c[..self.n])
    }

    pub fn contains(&self, p: &Point, tol: f64) -> bool {
        (0..self.n).all(|i| p.coord(i) >= self.lo[i] - tol && p.coord(i) <= self.hi[i] + tol)
    }

    pub fn center(&self) -> Point {
        let c: Vec<f64> = (0..self.n).map(|i| 0.5 * (self.lo[i] + self.hi[i])).collect();
        Point::from_slice(&c)
    }

    /// Exact parameter intervals where `dist(seg(t), box) <= s`.
    pub fn seg_below(&self, seg: &Segment, s: f64) -> Vec<(f64, f64)> {
        // dist^2 is piecewise quadratic with breakpoints where a coordinate
        // crosses a face plane; solve the quadratic on each piece.
        let a = seg.a.coords();
        let b = seg.b.coords();
        let mut brk = vec![0.0, 1.0];
        for i in 0..self.n {
            let d = b[i] - a[i];
            if d.abs() > 1e-300 {
                for bound in [self.lo[i], self.hi[i]] {
                    let t = (bound - a[i]) / d;
                    if t > 0.0 && t < 1.0 {
                        brk.push(t);
                    }
                }
            }
        }
        brk.sort_by(|x, y| x.total_cmp(y));
        brk.dedup();
        let mut out = Vec::new();
        for w in brk.windows(2) {
            let (t0, t1) = (w[0], w[1]);
            if t1 - t0 < 1e-15 {
                continue;
            }
            let tm = 0.5 * (t0 + t1);
            // active penalty terms on this piece
            let mut c2 = 0.0;
            let mut c1 = 0.0;
            let mut c0 = 0.0;
            for i in 0..self.n {
                let x = a[i] + tm * (b[i] - a[i]);
                let (p0, p1) = if x < self.lo[i] {
                    (self.lo[i] - a[i], -(b[i] - a[i]))
                } else if x > self.hi[i] {
                    (a[i] - self.hi[i], b[i] - a[i])
                } else {
                    continue;
                };
                // penalty = p0 + p1 t
                c2 += p1 * p1;
                c1 += 2.0 * p0 * p1;
                c0 += p0 * p0;
            }
            // solve c2 t^2 + c1 t + c0 <= s^2 on [t0, t1]
            let rhs = s * s;
            if c2.abs() < 1e-300 {
                if c1.abs() < 1e-300 {
                    if c0 <= rhs {
                        out.push((t0, t1));
                    }
                } else {
                    let t = (rhs - c0) / c1;
                    let (lo, hi) = if c1 > 0.0 { (t0, t.min(t1)) } else { (t.max(t0), t1) };
                    if lo < hi {
                        out.push((lo, hi));
                    }
                }
            } else {
                let disc = c1 * c1 - 4.0 * c2 * (c0 - rhs);
                if disc >= 0.0 {
                    let sq = disc.sqrt();
                    let r1 = (-c1 - sq) / (2.0 * c2);
                    let r2 = (-c1 + sq) / (2.0 * c2);
                    let lo = r1.max(t0);
                    let hi = r2.min(t1);
                    if lo < hi {
                        out.push((lo, hi));
                    }
                }
            }
        }
        merge_intervals(out)
    }
}

/// Explicit union of boxes.
pub struct BoxSet {
    pub n: usize,
    pub boxes: Vec<AABox>,
}

impl Target for BoxSet {
    fn ambient_dim(&self) -> usize {
        self.n
    }

    fn dist_capped(&self, p: &Point, _cap: f64) -> f64 {
        self.boxes.iter().map(|b| b.dist(p)).fold(f64::INFINITY, f64::min)
    }

    fn nearest_within(&self, p: &Point, cap: f64) -> Option<Nearest> {
        let mut best: Option<Nearest> = None;
        let mut ties = 0;
        for b in &self.boxes {
            let d = b.dist(p);
            if d > cap {
                continue;
            }
            match &best {
                Some(cur) if (d - cur.dist).abs() < 1e-12 => ties += 1,
                Some(cur) if d >= cur.dist => {}
                _ => {
                    best = Some(Nearest { dist: d, point: b.clamp(p) });
                    ties = 0;
                }
            }
        }
        if ties > 0 {
            MEDIAL_FLAGS.fetch_add(1, Ordering::Relaxed);
        }
        best
    }

    fn seg_below(&self, seg: &Segment, s: f64) -> Vec<(f64, f64)> {
        let mut ivs = Vec::new();
        for b in &self.boxes {
            ivs.extend(b.seg_below(seg, s));
        }
        merge_intervals(ivs)
    }
}

// --- simplices ---------------------------------------------------------------

/// Exact point-to-simplex distance via face enumeration (k <= 5 vertices).
pub fn point_simplex_distance(p: &Point, verts: &[Point]) -> (f64, Point) {
    let n = p.dim();
    let k = verts.len();
    debug_assert!(k <= 6);
    let mut best = (f64::INFINITY, *p);
    for mask in 1u32..(1 << k) {
        let sel: Vec<&Point> =
            (0..k).filter(|i| mask & (1 << i) != 0).map(|i| &verts[i]).collect();
        if let Some(q) = affine_projection_in_hull(p, &sel, n) {
            let d = p.dist(&q);
            if d < best.0 {
                best = (d, q);
            }
        }
    }
    best
}

/// Project `p` onto the affine hull of `sel`; return it when its barycentric
/// coordinates are all nonnegative (within 1e-12).
fn affine_projection_in_hull(p: &Point, sel: &[&Point], n: usize) -> Option<Point> {
    let m = sel.len();
    if m == 1 {
        return Some(*sel[0]);
    }
    let k = m - 1;
    // B columns: sel[i+1]-sel[0]; solve (B^T B) x = B^T (p - sel[0])
    let mut bt = vec![[0.0f64; MAX_DIM]; k];
    for i in 0..k {
        for j in 0..n {
            bt[i][j] = sel[i + 1].coord(j) - sel[0].coord(j);
        }
    }
    let mut g = vec![vec![0.0f64; k + 1]; k];
    for i in 0..k {
        for j in 0..k {
            g[i][j] = (0..n).map(|d| bt[i][d] * bt[j][d]).sum();
        }
        g[i][k] = (0..n).map(|d| bt[i][d] * (p.coord(d) - sel[0].coord(d))).sum();
    }
    // gaussian elimination with partial pivoting
    let mut lam = vec![0.0f64; k];
    for col in 0..k {
        let piv = (col..k).max_by(|&a, &b| g[a][col].abs().total_cmp(&g[b][col].abs()))?;
        if g[piv][col].abs() < 1e-14 {
            return None; // degenerate subset; a smaller face covers it
        }
        g.swap(col, piv);
        for row in (col + 1)..k {
            let f = g[row][col] / g[col][col];
            for c in col..=k {
                g[row][c] -= f * g[col][c];
            }
        }
    }
    for col in (0..k).rev() {
        let mut v = g[col][k];
        for c in (col + 1)..k {
            v -= g[col][c] * lam[c];
        }
        lam[col] = v / g[col][col];
    }
    let l0 = 1.0 - lam.iter().sum::<f64>();
    if l0 < -1e-12 || lam.iter().any(|&l| l < -1e-12) {
        return None;
    }
    let mut q = vec![0.0; n];
    for j in 0..n {
        q[j] = sel[0].coord(j);
        for i in 0..k {
            q[j] += lam[i] * bt[i][j];
        }
    }
    Some(Point::from_slice(&q))
}

/// Union of explicit simplices (used for free-standing complexes).
pub struct SimplexSet {
    pub n: usize,
    pub simplices: Vec<Vec<Point>>,
}

impl SimplexSet {
    pub fn from_complex(c: &EuclideanComplex) -> SimplexSet {
        let d = c.dim();
        let simplices = (0..c.simplices[d].len()).map(|i| c.simplex_points(d, i)).collect();
        SimplexSet { n: c.n, simplices }
    }
}

impl Target for SimplexSet {
    fn ambient_dim(&self) -> usize {
        self.n
    }

    fn dist_capped(&self, p: &Point, _cap: f64) -> f64 {
        self.simplices
            .iter()
            .map(|s| point_simplex_distance(p, s).0)
            .fold(f64::INFINITY, f64::min)
    }

    fn nearest_within(&self, p: &Point, cap: f64) -> Option<Nearest> {
        let mut best: Option<Nearest> = None;
        let mut ties = 0;
        for s in &self.simplices {
            let (d, q) = point_simplex_distance(p, s);
            if d > cap {
                continue;
            }
            match &best {
                Some(cur) if (d - cur.dist).abs() < 1e-12 => ties += 1,
                Some(cur) if d >= cur.dist => {}
                _ => {
                    best = Some(Nearest { dist: d, point: q });
                    ties = 0;
                }
            }
        }
        if ties > 0 {
            MEDIAL_FLAGS.fetch_add(1, Ordering::Relaxed);
        }
        best
    }

    fn seg_below(&self, seg: &Segment, s: f64) -> Vec<(f64, f64)> {
        let mut ivs = Vec::new();
        for sx in &self.simplices {
            convex_seg_below(seg, s, &mut ivs, &|p| point_simplex_distance(p, sx).0);
        }
        merge_intervals(ivs)
    }
}

/// `{t: d(seg(t)) <= s}` for a convex distance function, by ternary search
/// for the minimum and bisection for the two boundary roots.
pub fn convex_seg_below(
    seg: &Segment,
    s: f64,
    out: &mut Vec<(f64, f64)>,
    d: &dyn Fn(&Point) -> f64,
) {
    let f = |t: f64| d(&seg.eval(t));
    let (fa, fb) = (f(0.0), f(1.0));
    // conservative prune: d is 1-Lipschitz in arclength
    if (fa + fb - seg.length()) / 2.0 > s {
        return;
    }
    // ternary search for the minimizer of the convex function
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..60 {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if f(m1) <= f(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    let tmin = 0.5 * (lo + hi);
    let fmin = f(tmin).min(fa).min(fb);
    if fmin > s {
        return;
    }
    let t_at_min = if fa <= fmin + 1e-300 {
        0.0
    } else if fb <= fmin + 1e-300 {
        1.0
    } else {
        tmin
    };
    // left root in [0, t_at_min], right root in [t_at_min, 1]
    let left = if fa <= s {
        0.0
    } else {
        bisect_root(&f, 0.0, t_at_min, s, true)
    };
    let right = if fb <= s {
        1.0
    } else {
        bisect_root(&f, t_at_min, 1.0, s, false)
    };
    if left < right {
        out.push((left, right));
    }
}

fn bisect_root(f: &dyn Fn(f64) -> f64, mut lo: f64, mut hi: f64, s: f64, descending: bool) -> f64 {
    // f(lo) > s >= f(hi) when descending, else f(lo) <= s < f(hi)
    for _ in 0..60 {
        let m = 0.5 * (lo + hi);
        let above = f(m) > s;
        if above == descending {
            lo = m;
        } else {
            hi = m;
        }
    }
    0.5 * (lo + hi)
}

// --- cube collar -------------------------------------------------------------

/// The exact collar structure of the unit cube: depth-t level sets are the
/// homothety copies of the boundary, so the chart (y, t) -> c + (1-2t)(y-c)
/// is global, bijective up to depth 1/2 and preserves depth exactly.
pub struct CubeCollar {
    pub n: usize,
}

impl CubeCollar {
    pub fn depth(&self, p: &Point) -> f64 {
        CubeBoundary::depth(p)
    }

    pub fn extrude(&self, y: &Point, t: f64) -> Point {
        let c = self.center();
        y.homothety(&c, 1.0 - 2.0 * t)
    }

    pub fn project(&self, p: &Point) -> Point {
        let t = self.depth(p);
        let c = self.center();
        p.homothety(&c, 1.0 / (1.0 - 2.0 * t))
    }

    pub fn center(&self) -> Point {
        Point::from_slice(&vec![0.5; self.n])
    }
}

/// Collar map with the blended inward normal field: face normals on face
/// interiors, the normalized sum of incident face normals at edges and
/// corners, PL-blended over a band of width `h = r0`.
pub struct BlendedCollar {
    pub n: usize,
    pub r0: f64,
}

impl BlendedCollar {
    pub fn new(n: usize) -> BlendedCollar {
        BlendedCollar { n, r0: 1.0 / (4.0 * n as f64) }
    }

    pub fn direction(&self, y: &Point) -> Vec<f64> {
        let h = self.r0;
        let mut v = vec![0.0; self.n];
        for i in 0..self.n {
            let x = y.coord(i);
            v[i] = (1.0 - x / h).max(0.0) - (1.0 - (1.0 - x) / h).max(0.0);
        }
        let norm = Point::norm(&v);
        if norm < 1e-300 {
            // interior point; direction undefined, caller guards
            return v;
        }
        v.iter().map(|x| x / norm).collect()
    }

    pub fn exp(&self, y: &Point, t: f64) -> Result<Point> {
        if t < 0.0 || t > self.r0 {
            return Err(Error::CollarDepth { t, r0: self.r0 });
        }
        Ok(y.add_scaled(&self.direction(y), t))
    }

    /// Invert `exp` on its image by fixed-point iteration along exit rays.
    pub fn exp_inverse(&self, z: &Point, tol: f64) -> Result<(Point, f64)> {
        let mut y = CubeCollar { n: self.n }.project(z);
        for _ in 0..200 {
            let u = self.direction(&y);
            // march from z against u until some coordinate exits the cube
            let mut t_exit = f64::INFINITY;
            for i in 0..self.n {
                if u[i] > 1e-14 {
                    t_exit = t_exit.min(z.coord(i) / u[i]);
                } else if u[i] < -1e-14 {
                    t_exit = t_exit.min((z.coord(i) - 1.0) / u[i]);
                }
            }
            if !t_exit.is_finite() {
                return Err(Error::RootIsolation {
                    tol,
                    detail: "collar inverse: no exit ray".into(),
                });
            }
            let y_next = z.add_scaled(&u, -t_exit);
            let moved = y.dist(&y_next);
            y = y_next;
            if moved < tol {
                let t = z.dist(&y);
                return Ok((y, t));
            }
        }
        Err(Error::RootIsolation { tol, detail: "collar inverse did not converge".into() })
    }
}

// --- retractions ---------------------------------------------------------------

/// Radial reparameterization profile: 0 on [0,eps], affine [eps,eps_bar] onto
/// [0,eps_bar], identity beyond.
#[derive(Clone, Copy, Debug)]
pub struct Profile {
    pub eps: f64,
    pub eps_bar: f64,
}

impl Profile {
    pub fn eval(&self, d: f64) -> f64 {
        if d <= self.eps {
            0.0
        } else if d >= self.eps_bar {
            d
        } else {
            self.eps_bar * (d - self.eps) / (self.eps_bar - self.eps)
        }
    }

    pub fn lipschitz(&self) -> f64 {
        1.0 / (1.0 - self.eps / self.eps_bar)
    }
}

/// A retraction `S(A, eps, eps_bar)`.
pub enum Retraction {
    /// Around the cube boundary, moving along the exact collar rays.
    Collar { n: usize, profile: Profile },
    /// Around a general target, moving radially toward the nearest point
    /// (deterministic lowest-index tie break; ties are flagged).
    Nearest { target: DynTarget, profile: Profile },
}

impl Retraction {
    pub fn profile(&self) -> Profile {
        match self {
            Retraction::Collar { profile, .. } | Retraction::Nearest { profile, .. } => *profile,
        }
    }

    pub fn lipschitz(&self) -> f64 {
        self.profile().lipschitz()
    }

    pub fn target_dist(&self, p: &Point) -> f64 {
        match self {
            Retraction::Collar { .. } => CubeBoundary::depth(p).max(0.0),
            Retraction::Nearest { target, .. } => target.dist(p),
        }
    }

    pub fn apply(&self, p: &Point) -> Point {
        match self {
            Retraction::Collar { n, profile } => {
                let t = CubeBoundary::depth(p).max(0.0);
                if t >= profile.eps_bar || t >= 0.5 {
                    return *p;
                }
                let f = profile.eval(t);
                let c = CubeCollar { n: *n }.center();
                let lam = (1.0 - 2.0 * f) / (1.0 - 2.0 * t);
                p.homothety(&c, lam)
            }
            Retraction::Nearest { target, profile } => {
                match target.nearest_within(p, profile.eps_bar) {
                    None => *p,
                    Some(nr) => {
                        if nr.dist >= profile.eps_bar {
                            return *p;
                        }
                        if nr.dist <= 1e-300 {
                            return *p;
                        }
                        let f = profile.eval(nr.dist);
                        nr.point.lerp(p, f / nr.dist)
                    }
                }
            }
        }
    }
}

/// `R_k = S_1 o ... o S_k` (the innermost map applies first).
pub struct RetractionStack {
    pub maps: Vec<Arc<Retraction>>,
}

impl RetractionStack {
    pub fn new(maps: Vec<Arc<Retraction>>) -> Self {
        RetractionStack { maps }
    }

    pub fn depth(&self) -> usize {
        self.maps.len()
    }

    pub fn lipschitz(&self) -> f64 {
        self.maps.iter().map(|m| m.lipschitz()).product()
    }

    pub fn apply(&self, p: &Point) -> Point {
        let mut q = *p;
        for m in self.maps.iter().rev() {
            q = m.apply(&q);
        }
        q
    }
}

// --- pushforward ------------------------------------------------------------

/// A pointwise map that chains can be pushed through.
pub trait PointMap: Send + Sync {
    fn apply_point(&self, p: &Point) -> Point;
}

impl PointMap for Retraction {
    fn apply_point(&self, p: &Point) -> Point {
        self.apply(p)
    }
}

impl PointMap for RetractionStack {
    fn apply_point(&self, p: &Point) -> Point {
        self.apply(p)
    }
}

/// Affine similarity `x -> scale*x + offset` (compositions of homotheties).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Affine {
    pub n: usize,
    pub scale: f64,
    pub offset: [f64; MAX_DIM],
}

impl Affine {
    pub fn identity(n: usize) -> Affine {
        Affine { n, scale: 1.0, offset: [0.0; MAX_DIM] }
    }

    pub fn homothety(center: &Point, ratio: f64) -> Affine {
        let n = center.dim();
        let mut offset = [0.0; MAX_DIM];
        for i in 0..n {
            offset[i] = (1.0 - ratio) * center.coord(i);
        }
        Affine { n, scale: ratio, offset }
    }

    /// `self` after `inner`: x -> self(inner(x)).
    pub fn compose(&self, inner: &Affine) -> Affine {
        let mut offset = [0.0; MAX_DIM];
        for i in 0..self.n {
            offset[i] = self.scale * inner.offset[i] + self.offset[i];
        }
        Affine { n: self.n, scale: self.scale * inner.scale, offset }
    }

    pub fn is_identity(&self) -> bool {
        self.scale == 1.0 && self.offset[..self.n].iter().all(|&o| o == 0.0)
    }

    pub fn key_bits(&self) -> (u64, [u64; MAX_DIM]) {
        let mut ob = [0u64; MAX_DIM];
        for i in 0..self.n {
            ob[i] = self.offset[i].to_bits();
        }
        (self.scale.to_bits(), ob)
    }
}

impl PointMap for Affine {
    fn apply_point(&self, p: &Point) -> Point {
        let mut c = [0.0; MAX_DIM];
        for i in 0..self.n {
            c[i] = self.scale * p.coord(i) + self.offset[i];
        }
        Point::from_slice(&c[..self.n])
    }
}

/// Push a chain through a map, subdividing each segment on dyadic parameters
/// until the polyline image length moves by less than `tol` per refinement.
///
/// Certificate: `mass(image) <= Lip(map) * mass(chain) + tol` for Lipschitz
/// maps; the subdivision, being dyadic and driven only by the segment's own
/// endpoints, is deterministic.
pub fn pushforward(map: &dyn PointMap, chain: &Chain1, tol: f64) -> Chain1 {
    if chain.is_empty() {
        return Chain1::empty();
    }
    let per_seg = (tol / chain.segments().len() as f64).max(1e-14);
    let mut out = Vec::new();
    for seg in chain.segments() {
        push_segment(map, seg, per_seg, &mut out);
    }
    Chain1::from_segments(out)
}

fn push_segment(map: &dyn PointMap, seg: &Segment, tol: f64, out: &mut Vec<Segment>) {
    let mut depth = 2u32;
    let mut prev_len = polyline_len(map, seg, depth);
    loop {
        let next = polyline_len(map, seg, depth + 1);
        if (next - prev_len).abs() <= tol || depth >= 14 {
            break;
        }
        prev_len = next;
        depth += 1;
    }
    let m = 1usize << depth;
    let mut prev = map.apply_point(&seg.a);
    for k in 1..=m {
        let p = if k == m {
            map.apply_point(&seg.b)
        } else {
            map.apply_point(&seg.eval(k as f64 / m as f64))
        };
        if let Some(s) = Segment::new(prev, p) {
            out.push(s);
        }
        prev = p;
    }
}

fn polyline_len(map: &dyn PointMap, seg: &Segment, depth: u32) -> f64 {
    let m = 1usize << depth;
    let mut len = 0.0;
    let mut prev = map.apply_point(&seg.a);
    for k in 1..=m {
        let p = if k == m {
            map.apply_point(&seg.b)
        } else {
            map.apply_point(&seg.eval(k as f64 / m as f64))
        };
        len += prev.dist(&p);
        prev = p;
    }
    len
}

/// Crossing parameters of a segment with the level set `{dist(.,A) = s}`.
///
/// Errors with [`Error::Tangency`] when the crossing structure is degenerate
/// within `tol` (graze, or a crossing within `tol` of a segment endpoint).
pub fn level_crossings(seg: &Segment, target: &dyn Target, s: f64, tol: f64) -> Result<Vec<f64>> {
    if s <= 0.0 {
        return Err(Error::InvalidInput("level value must be positive".into()));
    }
    let below = target.seg_below(seg, s);
    let mut crossings = Vec::new();
    for &(lo, hi) in &below {
        for t in [lo, hi] {
            if t > 0.0 && t < 1.0 {
                crossings.push(t);
            }
        }
    }
    crossings.sort_by(|a, b| a.total_cmp(b));
    // endpoint proximity and graze checks
    let len = seg.length();
    let t_tol = if len > 0.0 { tol / len } else { tol };
    for &t in &crossings {
        if t < t_tol || t > 1.0 - t_tol {
            return Err(Error::Tangency { s, tol });
        }
    }
    // a graze: an interval of the below-set whose interior never descends
    // below s - tol (the segment touches or rides the level set)
    for &(lo, hi) in &below {
        if (hi - lo) * len > tol {
            let tm = 0.5 * (lo + hi);
            let dm = target.dist(&seg.eval(tm));
            if dm > s - tol {
                return Err(Error::Tangency { s, tol });
            }
        } else if lo > 0.0 && hi < 1.0 {
            // a pinch: the segment dips to the level and back within tol
            return Err(Error::Tangency { s, tol });
        }
    }
    Ok(crossings)
}

/// True when no segment grazes, lies inside, or crosses the level set within
/// `tol` of one of its endpoints.
pub fn transversal(chain: &Chain1, target: &dyn Target, s: f64, tol: f64) -> bool {
    chain.segments().iter().all(|seg| level_crossings(seg, target, s, tol).is_ok())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(c: &[f64]) -> Point {
        Point::from_slice(c)
    }

    #[test]
    fn cube_center_distance() {
        let b = CubeBoundary { n: 4 };
        assert_eq!(b.dist(&pt(&[0.5, 0.5, 0.5, 0.5])), 0.5);
        assert_eq!(b.dist(&pt(&[0.0, 0.3, 0.7, 0.2])), 0.0);
    }

    #[test]
    fn point_segment_distance_closed_form() {
        // x=(0.25,0.4,0.9) vs segment {(0,0,1),(1,0,1)} -> sqrt(0.4^2+0.1^2)
        let verts = vec![pt(&[0.0, 0.0, 1.0]), pt(&[1.0, 0.0, 1.0])];
        let (d, q) = point_simplex_distance(&pt(&[0.25, 0.4, 0.9]), &verts);
        assert!((d - (0.4f64 * 0.4 + 0.1 * 0.1).sqrt()).abs() < 1e-12);
        assert!(q.dist(&pt(&[0.25, 0.0, 1.0])) < 1e-12);
    }

    #[test]
    fn perpendicular_entry_has_one_crossing_at_s_over_d() {
        // segment from a boundary point straight inward, depth d > s
        let n = 3;
        let seg = Segment::new(pt(&[0.5, 0.5, 0.0]), pt(&[0.5, 0.5, 0.4])).unwrap();
        let b = CubeBoundary { n };
        let s = 0.1;
        let cr = level_crossings(&seg, &b, s, 1e-9).unwrap();
        assert_eq!(cr.len(), 1);
        assert!((cr[0] - s / 0.4).abs() < 1e-12);
    }

    #[test]
    fn no_crossing_when_level_exceeds_reach() {
        let seg = Segment::new(pt(&[0.5, 0.5, 0.0]), pt(&[0.5, 0.5, 0.1])).unwrap();
        let b = CubeBoundary { n: 3 };
        assert!(level_crossings(&seg, &b, 0.3, 1e-9).unwrap().is_empty());
    }

    #[test]
    fn parallel_segment_at_exact_level_is_tangent() {
        let seg = Segment::new(pt(&[0.2, 0.5, 0.1]), pt(&[0.8, 0.5, 0.1])).unwrap();
        let b = CubeBoundary { n: 3 };
        assert!(matches!(
            level_crossings(&seg, &b, 0.1, 1e-9),
            Err(Error::Tangency { .. })
        ));
    }

    #[test]
    fn crossing_too_close_to_endpoint_is_flagged() {
        let b = CubeBoundary { n: 3 };
        let tol = 1e-3;
        // crossing at parameter 1 - tol/2 of a unit-ish segment
        let d = 0.5;
        let s = d * (1.0 - tol / (2.0 * d));
        let seg = Segment::new(pt(&[0.5, 0.5, 0.0]), pt(&[0.5, 0.5, d])).unwrap();
        assert!(level_crossings(&seg, &b, s, tol).is_err());
    }

    #[test]
    fn collar_retraction_profile_is_exact() {
        let profile = Profile { eps: 0.1, eps_bar: 0.2 };
        assert!((profile.lipschitz() - 2.0).abs() < 1e-15);
        let s1 = Retraction::Collar { n: 3, profile };
        // identity outside
        let far = pt(&[0.5, 0.5, 0.45]);
        assert_eq!(s1.apply(&far), far);
        // depth eps/2 < eps: lands on the boundary
        let x = pt(&[0.3, 0.4, 0.05]);
        let y = s1.apply(&x);
        assert!(CubeBoundary::depth(&y).abs() < 1e-15);
        // profile consistency in the expansion band
        let x2 = pt(&[0.3, 0.4, 0.15]);
        let y2 = s1.apply(&x2);
        assert!((CubeBoundary::depth(&y2) - profile.eval(0.15)).abs() < 1e-12);
    }

    #[test]
    fn nearest_retraction_projects_flat_facet() {
        // A = single flat facet; dist eps_bar/2 < eps -> orthogonal projection
        let facet = AABox::new(&[0.0, 0.0, 0.0], &[1.0, 1.0, 0.0]);
        let target: DynTarget = Arc::new(BoxSet { n: 3, boxes: vec![facet] });
        let s = Retraction::Nearest {
            target,
            profile: Profile { eps: 0.3, eps_bar: 0.4 },
        };
        let x = pt(&[0.3, 0.7, 0.2]);
        let y = s.apply(&x);
        assert!(y.dist(&pt(&[0.3, 0.7, 0.0])) < 1e-12);
    }

    #[test]
    fn pushforward_certificate_and_exact_identity_region() {
        let profile = Profile { eps: 0.05, eps_bar: 0.1 };
        let s1 = Retraction::Collar { n: 3, profile };
        // far from the boundary: image is the same chain, bitwise
        let far = Chain1::polyline(&[pt(&[0.3, 0.4, 0.5]), pt(&[0.6, 0.5, 0.4])]);
        assert_eq!(pushforward(&s1, &far, 1e-9), far);
        // through the expansion band: certified mass bound
        let tau = Chain1::polyline(&[pt(&[0.5, 0.5, 0.06]), pt(&[0.52, 0.48, 0.3])]);
        let img = pushforward(&s1, &tau, 1e-9);
        assert!(img.mass() <= profile.lipschitz() * tau.mass() + 1e-6);
    }

    #[test]
    fn blended_collar_directions() {
        let e = BlendedCollar::new(3);
        // face interior: inward normal
        let d = e.direction(&pt(&[0.5, 0.5, 0.0]));
        assert!((d[0]).abs() < 1e-15 && (d[1]).abs() < 1e-15 && (d[2] - 1.0).abs() < 1e-15);
        // cube edge: 45 degree diagonal
        let d2 = e.direction(&pt(&[0.0, 0.5, 0.0]));
        let inv = 1.0 / 2f64.sqrt();
        assert!((d2[0] - inv).abs() < 1e-15 && (d2[2] - inv).abs() < 1e-15);
    }

    #[test]
    fn blended_collar_exp_and_inverse() {
        let e = BlendedCollar::new(3);
        let y = pt(&[0.4, 0.7, 0.0]);
        assert_eq!(e.exp(&y, 0.0).unwrap(), y);
        let t = e.r0 / 2.0;
        let z = e.exp(&y, t).unwrap();
        let (y2, t2) = e.exp_inverse(&z, 1e-12).unwrap();
        assert!(y2.dist(&y) < 1e-9);
        assert!((t2 - t).abs() < 1e-9);
        assert!(e.exp(&y, 2.0 * e.r0).is_err());
    }

    #[test]
    fn box_seg_below_is_exact() {
        // unit segment passing a box at known offsets
        let b = AABox::new(&[0.4, 0.4], &[0.6, 0.6]);
        let seg = Segment::new(pt(&[0.0, 0.5]), pt(&[1.0, 0.5])).unwrap();
        let iv = b.seg_below(&seg, 0.1);
        assert_eq!(iv.len(), 1);
        assert!((iv[0].0 - 0.3).abs() < 1e-12 && (iv[0].1 - 0.7).abs() < 1e-12);
    }
}
