//! The boundary skeleton tower on `M = [0,1]^n`.
//!
//! Level j (`Σ^j`) is a cubical complex of dimension `n-j` living on the
//! boundary: level 1 is the boundary itself gridded at resolution `R_1`,
//! level j+1 is the codimension-one cubical skeleton of level j regridded at
//! resolution `R_{j+1} = f_{j+1} R_j`, down to level n-2; levels n-1 and n
//! are the cubical 1- and 0-skeleta of level n-2 at its resolution. Cells
//! are never stored: membership is an integer recursion, so the tower scales
//! to fine widths and cells are materialized only near queries.
//!
//! The enlarged hypersurfaces `A_l` (l >= 2) are collar extrusions of level
//! l to depth `eps_{l-1}`: for the exact cube collar this realizes the
//! retraction preimage of the level (each extruded cell is the frustum of
//! its box toward the cube center).

use crate::complex::{EuclideanComplex, Point, MAX_DIM};
use crate::error::{Error, Result};
use crate::geometry::{
    AABox, CubeBoundary, CubeCollar, DynTarget, Nearest, Profile, Retraction, RetractionStack,
    Target, MEDIAL_FLAGS,
};
use serde::{Deserialize, Serialize};
use std::sync::atomic::Ordering;
use std::sync::Arc;

/// A cubical cell of a tower level: axis-aligned box on the level's integer
/// lattice. Pinned axes carry a lattice value in `base`; free axes span
/// `[base, base+1]`. The derived `Ord` is the deterministic enumeration
/// order used for Borel ownership.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct CellKey {
    pub base: [i64; MAX_DIM],
    pub free_mask: u8,
}

impl CellKey {
    pub fn dim(&self) -> usize {
        self.free_mask.count_ones() as usize
    }

    pub fn free_axes(&self, n: usize) -> Vec<usize> {
        (0..n).filter(|i| self.free_mask & (1 << i) != 0).collect()
    }

    pub fn pinned_axes(&self, n: usize) -> Vec<usize> {
        (0..n).filter(|i| self.free_mask & (1 << i) == 0).collect()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TowerSchedule {
    pub p: Option<u64>,
    pub alpha: Option<f64>,
    pub rho: Vec<f64>,
    pub eps: Vec<f64>,
    pub eps_bar: Vec<f64>,
}

/// Integer skeleton-tower structure plus the schedule it was built from.
pub struct TowerCore {
    pub n: usize,
    pub m1: u64,
    /// refinement factors, `factors[j-2]` for level j in `2..=n-2`
    pub factors: Vec<u64>,
    /// lattice resolution per level, `res[j-1]` for level j in `1..=n`
    pub res: Vec<u64>,
    pub schedule: TowerSchedule,
    cell_cache: std::sync::RwLock<std::collections::HashMap<(usize, CellKey), bool>>,
}

/// Validity of a cell depends only on its pinned axes and values (free bases
/// enter range checks only), so memoization keys pin the frees to 0.
fn plane_rep(n: usize, key: &CellKey) -> CellKey {
    let mut rep = *key;
    for ax in 0..n {
        if rep.free_mask & (1 << ax) != 0 {
            rep.base[ax] = 0;
        }
    }
    rep
}

impl TowerCore {
    /// Number of pinned axes of a level-j cell.
    pub fn pins(&self, j: usize) -> usize {
        if j <= self.n - 2 {
            j
        } else {
            j.min(self.n)
        }
    }

    pub fn cell_dim(&self, j: usize) -> usize {
        self.n - self.pins(j)
    }

    pub fn level_res(&self, j: usize) -> u64 {
        self.res[j - 1]
    }

    fn factor(&self, j: usize) -> u64 {
        if (2..=self.n - 2).contains(&j) {
            self.factors[j - 2]
        } else {
            1
        }
    }

    /// Kuhn-simplex width of the level's triangulation.
    pub fn width(&self, j: usize) -> f64 {
        (self.cell_dim(j).max(1) as f64).sqrt() / self.level_res(j) as f64
    }

    // --- membership -------------------------------------------------------

    /// Is `key` a cell of level `j` (at resolution `level_res(j)`)?
    pub fn is_cell(&self, j: usize, key: &CellKey) -> bool {
        if key.dim() != self.cell_dim(j) {
            return false;
        }
        let r = self.level_res(j) as i64;
        for ax in 0..self.n {
            let v = key.base[ax];
            if key.free_mask & (1 << ax) != 0 {
                if v < 0 || v >= r {
                    return false;
                }
            } else if v < 0 || v > r {
                return false;
            }
        }
        let rep = plane_rep(self.n, key);
        if let Some(&v) = self.cell_cache.read().unwrap().get(&(j, rep)) {
            return v;
        }
        let v = self.fine(j, &rep);
        self.cell_cache.write().unwrap().insert((j, rep), v);
        v
    }

    fn fine(&self, j: usize, key: &CellKey) -> bool {
        if j == 1 {
            let pins = key.pinned_axes(self.n);
            if pins.len() != 1 {
                return false;
            }
            let v = key.base[pins[0]];
            return v == 0 || v == self.level_res(1) as i64;
        }
        let f = self.factor(j) as i64;
        let mut coarse = *key;
        for ax in 0..self.n {
            if key.free_mask & (1 << ax) != 0 {
                coarse.base[ax] = key.base[ax].div_euclid(f);
            } else {
                if key.base[ax] % f != 0 {
                    return false;
                }
                coarse.base[ax] = key.base[ax] / f;
            }
        }
        self.raw(j, &coarse)
    }

    /// Raw level-j cell at the parent resolution: some pinned axis frees to a
    /// fine level-(j-1) cell.
    fn raw(&self, j: usize, key: &CellKey) -> bool {
        let parent_res = self.level_res(j - 1) as i64;
        for ax in key.pinned_axes(self.n) {
            let v = key.base[ax];
            for side in [-1i64, 0] {
                let b = v + side;
                if b < 0 || b + 1 > parent_res {
                    continue;
                }
                let mut exp = *key;
                exp.free_mask |= 1 << ax;
                exp.base[ax] = b;
                if self.fine(j - 1, &exp) {
                    return true;
                }
            }
        }
        false
    }

    // --- geometry -----------------------------------------------------------

    pub fn cell_box(&self, j: usize, key: &CellKey) -> AABox {
        let r = self.level_res(j) as f64;
        let mut lo = [0.0; MAX_DIM];
        let mut hi = [0.0; MAX_DIM];
        for ax in 0..self.n {
            lo[ax] = key.base[ax] as f64 / r;
            hi[ax] = if key.free_mask & (1 << ax) != 0 {
                (key.base[ax] + 1) as f64 / r
            } else {
                lo[ax]
            };
        }
        AABox { n: self.n, lo, hi }
    }

    /// The anchor point `q_E`: box center for cells of levels `<= n-2`, the
    /// lexicographically smallest vertex for 1-cells of level n-1, the point
    /// itself for level n.
    pub fn cell_anchor(&self, j: usize, key: &CellKey) -> Point {
        let b = self.cell_box(j, key);
        if j <= self.n - 2 {
            b.center()
        } else {
            Point::from_slice(&b.lo[..self.n])
        }
    }

    // --- local enumeration ---------------------------------------------------

    /// All level-j cells whose box meets `[lo-margin, hi+margin]`.
    pub fn cells_near(&self, j: usize, lo: &[f64], hi: &[f64], margin: f64) -> Vec<CellKey> {
        let r = self.level_res(j);
        let rf = r as f64;
        let pins = self.pins(j);
        let mut pin_ranges = Vec::with_capacity(self.n);
        let mut free_ranges = Vec::with_capacity(self.n);
        for ax in 0..self.n {
            let a = ((lo[ax] - margin) * rf).ceil().max(0.0) as i64;
            let b = ((hi[ax] + margin) * rf).floor().min(rf) as i64;
            pin_ranges.push((a, b)); // pinned value in [a, b]
            let fa = ((lo[ax] - margin) * rf).floor().max(0.0) as i64;
            let fb = (((hi[ax] + margin) * rf).ceil() as i64 - 1).min(r as i64 - 1);
            free_ranges.push((fa, fb)); // free base in [fa, fb]
        }
        // enumerate valid pin-planes, then take the free-base product
        let mut planes = Vec::new();
        let mut key = CellKey { base: [0; MAX_DIM], free_mask: 0 };
        self.enum_rec(j, pins, 0, false, &pin_ranges, &free_ranges, &mut key, &mut planes);
        let mut out = Vec::new();
        for plane in planes {
            let free: Vec<usize> = plane.free_axes(self.n);
            let mut cur = plane;
            fill_free(self, &free, 0, &free_ranges, &mut cur, &mut out);
        }
        out
    }

    #[allow(clippy::too_many_arguments)]
    fn enum_rec(
        &self,
        j: usize,
        pins_left: usize,
        ax: usize,
        has_bd: bool,
        pin_ranges: &[(i64, i64)],
        free_ranges: &[(i64, i64)],
        key: &mut CellKey,
        out: &mut Vec<CellKey>,
    ) {
        if ax == self.n {
            // every cell carries at least one boundary-valued pin
            if pins_left == 0 && has_bd && self.is_cell(j, key) {
                out.push(*key);
            }
            return;
        }
        let axes_left = self.n - ax;
        let r = self.level_res(j) as i64;
        let f = self.factor(j) as i64;
        // pin this axis (values must align to the level's refinement)
        if pins_left > 0 {
            let (a, b) = pin_ranges[ax];
            for v in a..=b {
                if v % f != 0 {
                    continue;
                }
                key.free_mask &= !(1 << ax);
                key.base[ax] = v;
                let bd = has_bd || v == 0 || v == r;
                self.enum_rec(j, pins_left - 1, ax + 1, bd, pin_ranges, free_ranges, key, out);
            }
        }
        // leave it free at the representative base; nonempty range required
        if axes_left > pins_left {
            let (a, b) = free_ranges[ax];
            if a <= b {
                key.free_mask |= 1 << ax;
                key.base[ax] = 0;
                self.enum_rec(j, pins_left, ax + 1, has_bd, pin_ranges, free_ranges, key, out);
                key.free_mask &= !(1 << ax);
            }
        }
    }

    /// Valid pin-planes (free bases at a representative 0) with pinned
    /// values in the given ranges.
    pub fn planes_in(&self, j: usize, pin_ranges: &[(i64, i64)]) -> Vec<CellKey> {
        let free_ranges: Vec<(i64, i64)> = vec![(0, 0); self.n];
        let mut planes = Vec::new();
        let mut key = CellKey { base: [0; MAX_DIM], free_mask: 0 };
        self.enum_rec(j, self.pins(j), 0, false, pin_ranges, &free_ranges, &mut key, &mut planes);
        planes
    }

    /// All cells of a level. Guarded: errors when the level is too large to
    /// materialize (use local queries instead).
    pub fn enumerate_level(&self, j: usize) -> Result<Vec<CellKey>> {
        let r = self.level_res(j);
        let est = (r as f64 + 1.0).powi(self.pins(j) as i32)
            * (r as f64).powi(self.cell_dim(j) as i32)
            * (binom(self.n, self.pins(j)) as f64);
        if est > 2.0e8 {
            return Err(Error::InvalidInput(format!(
                "level {j} too large to enumerate (~{est:.1e} candidates)"
            )));
        }
        let lo = vec![0.0; self.n];
        let hi = vec![1.0; self.n];
        Ok(self.cells_near(j, &lo, &hi, 0.0))
    }

    /// Top cells of level `l` contained in the closed cell `d` of level `k`.
    pub fn count_subcells(&self, k: usize, d: &CellKey, l: usize) -> Result<u64> {
        if !self.is_cell(k, d) {
            return Err(Error::NotACell(format!("{d:?} at level {k}")));
        }
        if l == k {
            return Ok(1);
        }
        if !(k < l && l <= self.n) {
            return Err(Error::InvalidInput(format!("levels must satisfy k<l<=n, got {k},{l}")));
        }
        let b = self.cell_box(k, d);
        let cells = self.cells_near(l, &b.lo[..self.n], &b.hi[..self.n], 0.0);
        let tol = 1e-12;
        Ok(cells
            .iter()
            .filter(|c| {
                let cb = self.cell_box(l, c);
                (0..self.n).all(|ax| cb.lo[ax] >= b.lo[ax] - tol && cb.hi[ax] <= b.hi[ax] + tol)
            })
            .count() as u64)
    }

    // --- point location -------------------------------------------------------

    /// Cells of level j containing `x` (within `tol` on pinned axes).
    pub fn cells_containing(&self, j: usize, x: &Point, tol: f64) -> Vec<CellKey> {
        let r = self.level_res(j);
        let rf = r as f64;
        let pins = self.pins(j);
        let mut pin_opts: Vec<Option<i64>> = Vec::with_capacity(self.n);
        let mut free_opts: Vec<Vec<i64>> = Vec::with_capacity(self.n);
        for ax in 0..self.n {
            let g = x.coord(ax) * rf;
            let near = g.round();
            let snapped = (g - near).abs() <= tol * rf + 1e-12;
            pin_opts.push(if snapped && near >= 0.0 && near <= rf {
                Some(near as i64)
            } else {
                None
            });
            let mut fo = Vec::new();
            if snapped {
                for b in [near as i64 - 1, near as i64] {
                    if b >= 0 && b < r as i64 {
                        fo.push(b);
                    }
                }
            } else {
                let b = g.floor() as i64;
                if b >= 0 && b < r as i64 {
                    fo.push(b);
                }
            }
            free_opts.push(fo);
        }
        let mut out = Vec::new();
        let mut key = CellKey { base: [0; MAX_DIM], free_mask: 0 };
        fn rec(
            core: &TowerCore,
            j: usize,
            pins_left: usize,
            ax: usize,
            pin_opts: &[Option<i64>],
            free_opts: &[Vec<i64>],
            key: &mut CellKey,
            out: &mut Vec<CellKey>,
        ) {
            if ax == core.n {
                if pins_left == 0 && core.is_cell(j, key) {
                    out.push(*key);
                }
                return;
            }
            if pins_left > 0 {
                if let Some(v) = pin_opts[ax] {
                    key.free_mask &= !(1 << ax);
                    key.base[ax] = v;
                    rec(core, j, pins_left - 1, ax + 1, pin_opts, free_opts, key, out);
                }
            }
            if core.n - ax > pins_left {
                for &b in &free_opts[ax] {
                    key.free_mask |= 1 << ax;
                    key.base[ax] = b;
                    rec(core, j, pins_left, ax + 1, pin_opts, free_opts, key, out);
                }
                key.free_mask &= !(1 << ax);
            }
        }
        rec(self, j, pins, 0, &pin_opts, &free_opts, &mut key, &mut out);
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Borel owner: the lexicographically smallest level-j cell containing x.
    pub fn owner_cell(&self, j: usize, x: &Point, tol: f64) -> Option<CellKey> {
        self.cells_containing(j, x, tol).into_iter().next()
    }

    /// Deepest level (largest j) whose support contains `x` within `tol`,
    /// with the owning cell.
    pub fn locate_deepest(&self, x: &Point, tol: f64) -> Option<(usize, CellKey)> {
        for j in (1..=self.n).rev() {
            if let Some(c) = self.owner_cell(j, x, tol) {
                return Some((j, c));
            }
        }
        None
    }

    /// The centers set of a closed cell `d` of level `k`: level-n points in
    /// `d` plus the anchors of all cells of levels `k..=n-2` inside `d`.
    pub fn centers_of_cell(&self, k: usize, d: &CellKey) -> Vec<Point> {
        let b = self.cell_box(k, d);
        let tol = 1e-12;
        let mut out = Vec::new();
        let mut lvls: Vec<usize> = (k..=self.n - 2).collect();
        lvls.push(self.n);
        for l in lvls {
            if l < k {
                continue;
            }
            for c in self.cells_near(l, &b.lo[..self.n], &b.hi[..self.n], 0.0) {
                let cb = self.cell_box(l, &c);
                let inside = (0..self.n)
                    .all(|ax| cb.lo[ax] >= b.lo[ax] - tol && cb.hi[ax] <= b.hi[ax] + tol);
                if inside {
                    out.push(self.cell_anchor(l, &c));
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Total k-volume of a level (total length for level n-1).
    pub fn level_mass(&self, j: usize) -> Result<f64> {
        let cells = self.enumerate_level(j)?;
        let d = self.cell_dim(j);
        let h = 1.0 / self.level_res(j) as f64;
        Ok(cells.len() as f64 * h.powi(d as i32))
    }

    /// Materialize the Kuhn triangulation of a level as a complex.
    pub fn level_complex(&self, j: usize) -> Result<EuclideanComplex> {
        let cells = self.enumerate_level(j)?;
        let d = self.cell_dim(j);
        let mut vertices: Vec<Point> = Vec::new();
        let mut vid = std::collections::HashMap::new();
        let mut tops: Vec<Vec<u32>> = Vec::new();
        for c in &cells {
            let b = self.cell_box(j, c);
            let free = c.free_axes(self.n);
            if d == 0 {
                let p = Point::from_slice(&b.lo[..self.n]);
                let id = *vid.entry(p).or_insert_with(|| {
                    vertices.push(p);
                    (vertices.len() - 1) as u32
                });
                tops.push(vec![id]);
                continue;
            }
            let mut perms = Vec::new();
            super::permutations(d, &mut (0..d).collect::<Vec<_>>(), 0, &mut perms);
            for perm in &perms {
                let mut cur = b.lo;
                let mut simplex = Vec::with_capacity(d + 1);
                let h = 1.0 / self.level_res(j) as f64;
                let push = |coords: &[f64; MAX_DIM],
                                vertices: &mut Vec<Point>,
                                vid: &mut std::collections::HashMap<Point, u32>|
                 -> u32 {
                    let p = Point::from_slice(&coords[..self.n]);
                    *vid.entry(p).or_insert_with(|| {
                        vertices.push(p);
                        (vertices.len() - 1) as u32
                    })
                };
                simplex.push(push(&cur, &mut vertices, &mut vid));
                for &k_ in perm {
                    cur[free[k_]] += h;
                    simplex.push(push(&cur, &mut vertices, &mut vid));
                }
                simplex.sort_unstable();
                tops.push(simplex);
            }
        }
        let mut simplices = vec![Vec::new(); d + 1];
        simplices[0] = (0..vertices.len() as u32).map(|i| vec![i]).collect();
        simplices[d] = tops;
        Ok(EuclideanComplex { n: self.n, vertices, simplices })
    }

    pub fn top_simplex_count(&self, j: usize) -> Result<u64> {
        let cells = self.enumerate_level(j)?;
        let d = self.cell_dim(j);
        Ok(cells.len() as u64 * factorial(d.max(1)) as u64)
    }
}

fn fill_free(
    core: &TowerCore,
    free: &[usize],
    idx: usize,
    free_ranges: &[(i64, i64)],
    cur: &mut CellKey,
    out: &mut Vec<CellKey>,
) {
    let _ = core;
    if idx == free.len() {
        out.push(*cur);
        return;
    }
    let ax = free[idx];
    let (a, b) = free_ranges[ax];
    for v in a..=b {
        cur.base[ax] = v;
        fill_free(core, free, idx + 1, free_ranges, cur, out);
    }
    cur.base[ax] = if a <= b { a } else { 0 };
}

fn binom(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    let mut r = 1u64;
    for i in 0..k {
        r = r * (n - i) as u64 / (i + 1) as u64;
    }
    r
}

fn factorial(k: usize) -> usize {
    (1..=k).product::<usize>().max(1)
}

// --- shell target --------------------------------------------------------------

/// One shell cell: base box plus the bounding box of its extrusion.
pub struct CellFrustum {
    pub cell: CellKey,
    pub base: AABox,
    pub aabb: AABox,
}

/// Exact distance from a point to the collar extrusion of an axis box: the
/// extrusion is the union over s in [0, depth] of the homothety copies of
/// the box, and the squared distance to the copy at scale s is a convex
/// piecewise quadratic in s.
pub fn frustum_dist(p: &Point, base: &AABox, depth: f64) -> (f64, Point, f64) {
    let n = base.n;
    let mut brk = vec![0.0, depth];
    // per axis, the scales where p crosses the moving lo/hi walls
    for ax in 0..n {
        for w in [base.lo[ax], base.hi[ax]] {
            let num = w - p.coord(ax);
            let den = w - 0.5;
            // wall(s) = 0.5 + (1-2s)(w - 0.5) = p  =>  s = num / (2 den)
            if den.abs() > 1e-300 {
                let s = num / (2.0 * den);
                if s > 0.0 && s < depth {
                    brk.push(s);
                }
            }
        }
    }
    brk.sort_by(|a, b| a.total_cmp(b));
    brk.dedup();
    let mut best = (f64::INFINITY, 0.0);
    for w in brk.windows(2) {
        let (a, b) = (w[0], w[1]);
        let sm = 0.5 * (a + b);
        // accumulate active penalties: penalty_ax(s) = alpha + beta*s
        let mut qa = 0.0; // sum beta^2
        let mut qb = 0.0; // sum 2 alpha beta
        let mut qc = 0.0; // sum alpha^2
        for ax in 0..n {
            let x = p.coord(ax);
            let lo0 = 0.5 + (base.lo[ax] - 0.5);
            let lo_b = -2.0 * (base.lo[ax] - 0.5);
            let hi0 = 0.5 + (base.hi[ax] - 0.5);
            let hi_b = -2.0 * (base.hi[ax] - 0.5);
            let lo_m = lo0 + lo_b * sm;
            let hi_m = hi0 + hi_b * sm;
            let (alpha, beta) = if x < lo_m {
                (lo0 - x, lo_b)
            } else if x > hi_m {
                (x - hi0, -hi_b)
            } else {
                continue;
            };
            qa += beta * beta;
            qb += 2.0 * alpha * beta;
            qc += alpha * alpha;
        }
        let s_star = if qa > 1e-300 { (-qb / (2.0 * qa)).clamp(a, b) } else { sm };
        for s in [a, b, s_star] {
            let d2 = qa * s * s + qb * s + qc;
            if d2 < best.0 {
                best = (d2, s);
            }
        }
    }
    let (d2, s) = best;
    // witness: clamp p into the box at scale s
    let mut w = [0.0; MAX_DIM];
    for ax in 0..n {
        let lo = 0.5 + (1.0 - 2.0 * s) * (base.lo[ax] - 0.5);
        let hi = 0.5 + (1.0 - 2.0 * s) * (base.hi[ax] - 0.5);
        w[ax] = p.coord(ax).clamp(lo.min(hi), lo.max(hi));
    }
    (d2.max(0.0).sqrt(), Point::from_slice(&w[..n]), s)
}

/// `A_l` for l >= 2: the collar extrusion of level l to depth `depth`, as an
/// implicit union of extruded cells with a lazy per-voxel candidate cache.
pub struct ShellTarget {
    pub core: Arc<TowerCore>,
    pub level: usize,
    pub depth: f64,
    ratio: f64,
    vox_res: u64,
    margin0: f64,
    voxels: std::sync::RwLock<std::collections::HashMap<[i64; MAX_DIM], Arc<Vec<(f64, CellFrustum)>>>>,
}

impl ShellTarget {
    pub fn new(core: Arc<TowerCore>, level: usize, depth: f64) -> ShellTarget {
        let ratio = 1.0 - 2.0 * depth;
        let vox_res = core.level_res(level).max(4);
        let h = 1.0 / vox_res as f64;
        let reach = core.schedule.eps_bar.get(level - 1).copied().unwrap_or(0.1);
        let margin0 = reach + 3.0 * h;
        ShellTarget {
            core,
            level,
            depth,
            ratio,
            vox_res,
            margin0,
            voxels: std::sync::RwLock::new(std::collections::HashMap::new()),
        }
    }

    /// Voxel-list size at a point (diagnостics).
    pub fn debug_voxel_size(&self, p: &Point) -> usize {
        self.voxel_list(self.voxel_of(p)).len()
    }

    /// Largest query radius the voxel lists answer exactly.
    pub fn cap_max(&self) -> f64 {
        self.margin0 - 2.0 / self.vox_res as f64
    }

    fn frustum(&self, key: &CellKey) -> Arc<CellFrustum> {
        Arc::new(self.build_frustum(key))
    }

    fn build_frustum(&self, key: &CellKey) -> CellFrustum {
        let core = &self.core;
        let n = core.n;
        let base = core.cell_box(self.level, key);
        let center = CubeCollar { n }.center();
        let lo_s = Point::from_slice(&base.lo[..n]).homothety(&center, self.ratio);
        let hi_s = Point::from_slice(&base.hi[..n]).homothety(&center, self.ratio);
        let mut lo = [0.0; MAX_DIM];
        let mut hi = [0.0; MAX_DIM];
        for ax in 0..n {
            lo[ax] = base.lo[ax].min(lo_s.coord(ax)).min(hi_s.coord(ax));
            hi[ax] = base.hi[ax].max(lo_s.coord(ax)).max(hi_s.coord(ax));
        }
        CellFrustum { cell: *key, base, aabb: AABox { n, lo, hi } }
    }

    /// Candidate cell keys meeting the `reach`-inflation of a window, via the
    /// collar pullback of the window (sound superset). Planes are pruned by
    /// their exact pinned-coordinate reach before free cells are filled in.
    fn gather_cells(&self, lo: &[f64], hi: &[f64], reach: f64) -> Vec<CellKey> {
        let n = self.core.n;
        let c = 0.5;
        let inv = if self.ratio > 1e-9 { 1.0 / self.ratio } else { 1e9 };
        let res = self.core.level_res(self.level);
        let rf = res as f64;
        let mut wlo = vec![0.0; n];
        let mut whi = vec![0.0; n];
        for ax in 0..n {
            let a = lo[ax] - reach;
            let b = hi[ax] + reach;
            let a_back = c + (a - c) * inv;
            let b_back = c + (b - c) * inv;
            wlo[ax] = a.min(a_back).max(0.0);
            whi[ax] = b.max(b_back).min(1.0);
        }
        let pin_ranges: Vec<(i64, i64)> = (0..n)
            .map(|ax| (((wlo[ax]) * rf).ceil() as i64, ((whi[ax]) * rf).floor() as i64))
            .collect();
        let free_ranges: Vec<(i64, i64)> = (0..n)
            .map(|ax| {
                (
                    ((wlo[ax]) * rf).floor().max(0.0) as i64,
                    (((whi[ax]) * rf).ceil() as i64 - 1).min(res as i64 - 1),
                )
            })
            .collect();
        let planes = self.core.planes_in(self.level, &pin_ranges);
        let mut out = Vec::new();
        for plane in planes {
            // exact per-axis reach of the frustum over this plane's pins
            let mut reject = false;
            for ax in plane.pinned_axes(n) {
                let x = plane.base[ax] as f64 / rf;
                let xs = c + self.ratio * (x - c);
                let (flo, fhi) = (x.min(xs), x.max(xs));
                if flo > hi[ax] + reach || fhi < lo[ax] - reach {
                    reject = true;
                    break;
                }
            }
            if reject {
                continue;
            }
            let free: Vec<usize> = plane.free_axes(n);
            let mut cur = plane;
            fill_free(&self.core, &free, 0, &free_ranges, &mut cur, &mut out);
        }
        out.sort_unstable();
        out
    }

    fn gather(&self, lo: &[f64], hi: &[f64], reach: f64) -> Vec<Arc<CellFrustum>> {
        self.gather_cells(lo, hi, reach).iter().map(|ck| self.frustum(ck)).collect()
    }

    fn voxel_of(&self, p: &Point) -> [i64; MAX_DIM] {
        let mut v = [0i64; MAX_DIM];
        for ax in 0..self.core.n {
            v[ax] = ((p.coord(ax) * self.vox_res as f64).floor() as i64)
                .clamp(0, self.vox_res as i64 - 1);
        }
        v
    }

    /// Cells within `cap_max()` of a voxel, sorted by exact distance to its
    /// center, cached.
    fn voxel_list(&self, vox: [i64; MAX_DIM]) -> Arc<Vec<(f64, CellFrustum)>> {
        if let Some(v) = self.voxels.read().unwrap().get(&vox) {
            return v.clone();
        }
        let n = self.core.n;
        let h = 1.0 / self.vox_res as f64;
        let mut lo = [0.0; MAX_DIM];
        let mut hi = [0.0; MAX_DIM];
        for ax in 0..n {
            lo[ax] = vox[ax] as f64 * h;
            hi[ax] = (vox[ax] + 1) as f64 * h;
        }
        let mid = {
            let m: Vec<f64> = (0..n).map(|ax| 0.5 * (lo[ax] + hi[ax])).collect();
            Point::from_slice(&m)
        };
        let radius = self.margin0 + 0.5 * h * (n as f64).sqrt();
        let cells = self.gather_cells(&lo[..n], &hi[..n], self.margin0);
        let mut list: Vec<(f64, CellFrustum)> = Vec::new();
        for ck in cells {
            let base = self.core.cell_box(self.level, &ck);
            let d = frustum_dist(&mid, &base, self.depth).0;
            if d <= radius {
                list.push((d, self.build_frustum(&ck)));
            }
        }
        list.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cell.cmp(&b.1.cell)));
        let list = Arc::new(list);
        self.voxels.write().unwrap().entry(vox).or_insert(list).clone()
    }

    fn min_dist_over(&self, cands: &[Arc<CellFrustum>], p: &Point, cap: f64) -> f64 {
        let mut best = f64::INFINITY;
        for f in cands {
            let lb = f.aabb.dist(p);
            if lb >= best || lb > cap {
                continue;
            }
            let (d, _, _) = frustum_dist(p, &f.base, self.depth);
            if d < best {
                best = d;
            }
        }
        best
    }
}

impl Target for ShellTarget {
    fn ambient_dim(&self) -> usize {
        self.core.n
    }

    fn dist_capped(&self, p: &Point, cap: f64) -> f64 {
        let lower = CubeBoundary::depth(p) - self.depth;
        if lower >= cap {
            return cap.max(lower);
        }
        if cap <= self.cap_max() {
            let vox = self.voxel_of(p);
            let list = self.voxel_list(vox);
            let h = 1.0 / self.vox_res as f64;
            let vc = {
                let m: Vec<f64> = (0..self.core.n)
                    .map(|ax| (vox[ax] as f64 + 0.5) * h)
                    .collect();
                Point::from_slice(&m)
            };
            let delta = p.dist(&vc);
            let mut best = f64::INFINITY;
            for (dc, f) in list.iter() {
                if *dc - delta >= best {
                    break;
                }
                let dd = frustum_dist(p, &f.base, self.depth).0;
                if dd < best {
                    best = dd;
                }
            }
            return best.min(cap.max(lower) + 1.0);
        }
        let n = self.core.n;
        let mut radius: f64 = self.cap_max().max(1e-3);
        loop {
            let cands = self.gather(p.coords(), p.coords(), radius);
            let best = self.min_dist_over(&cands, p, radius.min(cap));
            if best <= radius {
                return best;
            }
            if radius >= cap || radius > (n as f64).sqrt() {
                return if best.is_finite() { best } else { cap.max(radius) };
            }
            radius = (radius * 3.0).min(cap * 1.0001);
        }
    }

    fn nearest_within(&self, p: &Point, cap: f64) -> Option<Nearest> {
        if CubeBoundary::depth(p) - self.depth > cap {
            return None;
        }
        let mut scratch: Vec<(f64, Arc<CellFrustum>)>;
        let list;
        let mut delta = 0.0;
        let cands: &[(f64, CellFrustum)] = if cap <= self.cap_max() {
            let vox = self.voxel_of(p);
            list = self.voxel_list(vox);
            let h = 1.0 / self.vox_res as f64;
            let vc = {
                let m: Vec<f64> = (0..self.core.n)
                    .map(|ax| (vox[ax] as f64 + 0.5) * h)
                    .collect();
                Point::from_slice(&m)
            };
            delta = p.dist(&vc);
            &list
        } else {
            scratch = self
                .gather(p.coords(), p.coords(), cap)
                .into_iter()
                .map(|f| (0.0, f))
                .collect();
            scratch.sort_by(|a, b| a.1.cell.cmp(&b.1.cell));
            // flatten Arc layer for a uniform view
            let flat: Vec<(f64, CellFrustum)> = scratch
                .iter()
                .map(|(d, f)| (*d, CellFrustum { cell: f.cell, base: f.base, aabb: f.aabb }))
                .collect();
            list = Arc::new(flat);
            &list
        };
        let mut best: Option<Nearest> = None;
        let mut ties = 0;
        // deterministic scan: ties resolve toward the earlier candidate
        for (dc, f) in cands.iter() {
            if let Some(cur) = &best {
                if *dc - delta > cur.dist + 1e-12 {
                    if delta == 0.0 && *dc > cap {
                        break;
                    }
                    continue;
                }
            }
            if *dc - delta > cap {
                continue;
            }
            let (d, q, _) = frustum_dist(p, &f.base, self.depth);
            if d > cap {
                continue;
            }
            match &best {
                Some(cur) if (d - cur.dist).abs() < 1e-12 && q != cur.point => ties += 1,
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

    fn seg_profile(&self, seg: &crate::chains::Segment, svals: &[f64]) -> Vec<u64> {
        use std::cell::RefCell;
        use std::collections::HashMap;
        let len = seg.length();
        let smax = svals.iter().cloned().fold(0.0f64, f64::max);
        if len <= 0.0 || smax <= 0.0 || smax > self.cap_max() {
            // fall back to the generic path for oversized levels
            return svals
                .iter()
                .map(|&s| {
                    let mut c = 0;
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
                .collect();
        }
        let h = 1.0 / self.vox_res as f64;
        let chunk_len = 1.9 * h;
        let chunks = ((len / chunk_len).ceil() as usize).max(1);
        let mut counts = vec![0u64; svals.len()];
        for ci in 0..chunks {
            let t0 = ci as f64 / chunks as f64;
            let t1 = (ci + 1) as f64 / chunks as f64;
            let (pa, pb) = (seg.eval(t0), seg.eval(t1));
            let half = 0.5 * (t1 - t0) * len;
            let dmin = CubeBoundary::depth(&pa).min(CubeBoundary::depth(&pb)) - half;
            if dmin - self.depth > smax {
                continue;
            }
            let mid = seg.eval(0.5 * (t0 + t1));
            // the mid voxel's list covers radius cap_max >= half + smax and
            // is sorted by distance to the voxel center
            let vox = self.voxel_of(&mid);
            let list = self.voxel_list(vox);
            let vc = {
                let m: Vec<f64> = (0..self.core.n)
                    .map(|ax| (vox[ax] as f64 + 0.5) * h)
                    .collect();
                Point::from_slice(&m)
            };
            let delta = mid.dist(&vc);
            let reach = half + smax + delta + 1e-9;
            let cut = list.partition_point(|(dc, _)| *dc <= reach);
            if cut == 0 {
                continue;
            }
            let local = &list[..cut];
            let cache: RefCell<HashMap<u64, f64>> = RefCell::new(HashMap::new());
            let sub = match crate::chains::Segment::new(pa, pb) {
                Some(s) => s,
                None => continue,
            };
            let slack = delta + half;
            let d = |p: &Point| -> f64 {
                let mut best = f64::INFINITY;
                for (dc, f) in local {
                    // |d(p) - d(vc)| <= |p - vc| <= slack
                    if *dc - slack >= best {
                        break;
                    }
                    let (dd, _, _) = frustum_dist(p, &f.base, self.depth);
                    if dd < best {
                        best = dd;
                    }
                }
                best
            };
            let d_cached = |t: f64| -> f64 {
                let key = t.to_bits();
                if let Some(&v) = cache.borrow().get(&key) {
                    return v;
                }
                let v = d(&sub.eval(t));
                cache.borrow_mut().insert(key, v);
                v
            };
            let sub_len = sub.length();
            for (si, &s) in svals.iter().enumerate() {
                let f = |t: f64| d_cached(t) - s;
                let mut events: Vec<(f64, bool)> = Vec::new();
                let fa = f(0.0);
                let fb = f(1.0);
                crate::geometry::refine_below_pub(&f, 0.0, fa, 1.0, fb, sub_len, &mut events);
                counts[si] += events.len() as u64;
            }
        }
        counts
    }

    fn seg_below(&self, seg: &crate::chains::Segment, s: f64) -> Vec<(f64, f64)> {
        let len = seg.length();
        let h = 1.0 / self.vox_res as f64;
        let chunk_len = 1.9 * h;
        let chunks = ((len / chunk_len).ceil() as usize).max(1);
        let wide = s + chunk_len > self.cap_max();
        let mut ivs: Vec<(f64, f64)> = Vec::new();
        let mut keep: Vec<(f64, Arc<CellFrustum>)> = Vec::new();
        for ci in 0..chunks {
            let t0 = ci as f64 / chunks as f64;
            let t1 = (ci + 1) as f64 / chunks as f64;
            let (pa, pb) = (seg.eval(t0), seg.eval(t1));
            let half = 0.5 * (t1 - t0) * len;
            let dmin = CubeBoundary::depth(&pa).min(CubeBoundary::depth(&pb)) - half;
            if dmin - self.depth > s {
                continue;
            }
            let mid = seg.eval(0.5 * (t0 + t1));
            keep.clear();
            let mut order: Vec<f64> = Vec::new();
            let mut slack = half;
            if wide {
                let n = self.core.n;
                let reach = half + s + 1e-9;
                let mut lo = [f64::INFINITY; MAX_DIM];
                let mut hi = [f64::NEG_INFINITY; MAX_DIM];
                for ax in 0..n {
                    lo[ax] = pa.coord(ax).min(pb.coord(ax));
                    hi[ax] = pa.coord(ax).max(pb.coord(ax));
                }
                for f in self.gather(&lo[..n], &hi[..n], s + h) {
                    let d = frustum_dist(&mid, &f.base, self.depth).0;
                    if d <= reach {
                        keep.push((d, f));
                    }
                }
                keep.sort_by(|a, b| a.0.total_cmp(&b.0));
                order.extend(keep.iter().map(|(d, _)| *d));
            } else {
                let vox = self.voxel_of(&mid);
                let list = self.voxel_list(vox);
                let vc = {
                    let m: Vec<f64> = (0..self.core.n)
                        .map(|ax| (vox[ax] as f64 + 0.5) * h)
                        .collect();
                    Point::from_slice(&m)
                };
                let delta = mid.dist(&vc);
                slack = half + delta;
                let reach = half + s + delta + 1e-9;
                let cut = list.partition_point(|(dc, _)| *dc <= reach);
                for (dc, f) in &list[..cut] {
                    keep.push((*dc, Arc::new(CellFrustum {
                        cell: f.cell,
                        base: f.base,
                        aabb: f.aabb,
                    })));
                    order.push(*dc);
                }
            }
            if keep.is_empty() {
                continue;
            }
            let d = |p: &Point| -> f64 {
                let mut best = f64::INFINITY;
                for (dc, f) in &keep {
                    if *dc - slack >= best {
                        break;
                    }
                    let dd = frustum_dist(p, &f.base, self.depth).0;
                    if dd < best {
                        best = dd;
                    }
                }
                best
            };
            if let Some(sub) = crate::chains::Segment::new(pa, pb) {
                for (a, b) in crate::geometry::lipschitz_seg_below(&d, &sub, s) {
                    ivs.push((t0 + a * (t1 - t0), t0 + b * (t1 - t0)));
                }
            }
        }
        let mut merged = crate::geometry::merge_intervals(ivs);
        let mut out: Vec<(f64, f64)> = Vec::new();
        for (a, b) in merged.drain(..) {
            if let Some(last) = out.last_mut() {
                if a - last.1 <= 1e-12 {
                    last.1 = last.1.max(b);
                    continue;
                }
            }
            out.push((a, b));
        }
        out
    }
}

// --- the tower ----------------------------------------------------------------

/// The assembled tower: integer core, distance targets `A_l`, retractions
/// `S_l` and stacks `R_k`.
pub struct SkeletonTower {
    pub core: Arc<TowerCore>,
    /// `a[l-1]` is the target for `A_l`, l = 1..=n-2
    pub a_targets: Vec<DynTarget>,
    /// `S_l`, l = 1..=n-2
    pub retractions: Vec<Arc<Retraction>>,
    /// `R_k = S_1 o ... o S_k`, k = 1..=n-2
    pub stacks: Vec<Arc<RetractionStack>>,
}

impl SkeletonTower {
    /// Build the tower for given widths/radii. Interleaving must be strict.
    pub fn build(
        n: usize,
        rho: &[f64],
        eps: &[f64],
        eps_bar: &[f64],
        p_alpha: Option<(u64, f64)>,
    ) -> Result<SkeletonTower> {
        if !(3..=MAX_DIM).contains(&n) {
            return Err(Error::UnsupportedDimension(n, "3..=6"));
        }
        let k = n - 2;
        if rho.len() != k || eps.len() != k || eps_bar.len() != k {
            return Err(Error::InvalidInput(format!("need {k} levels of rho/eps/eps_bar")));
        }
        // strict interleaving eps_bar_1 > eps_1 > rho_1 > eps_bar_2 > ...
        let mut seq = Vec::new();
        for l in 0..k {
            seq.push(eps_bar[l]);
            seq.push(eps[l]);
            seq.push(rho[l]);
        }
        for w in seq.windows(2) {
            if !(w[0] > w[1]) {
                return Err(Error::Interleaving {
                    p: p_alpha.map(|x| x.0).unwrap_or(0),
                    detail: format!("{} !> {}", w[0], w[1]),
                });
            }
        }
        if !(seq[seq.len() - 1] > 0.0) {
            return Err(Error::Interleaving {
                p: p_alpha.map(|x| x.0).unwrap_or(0),
                detail: "nonpositive width".into(),
            });
        }
        // facet grid: width sqrt(n-1)/m1 <= rho_1
        let m1 = (((n - 1) as f64).sqrt() / rho[0]).ceil() as u64;
        let mut factors = Vec::new();
        let mut res = vec![m1];
        for j in 2..=k {
            let prev = *res.last().unwrap();
            let dimj = n - j;
            let want = rho[j - 1];
            let cur_width = (dimj as f64).sqrt() / prev as f64;
            let f = (cur_width / want).ceil().max(1.0) as u64;
            factors.push(f);
            res.push(prev * f);
        }
        // levels n-1 and n share the resolution of level n-2
        let rk = *res.last().unwrap();
        while res.len() < n {
            res.push(rk);
        }
        let core = Arc::new(TowerCore {
            n,
            m1,
            factors,
            res,
            schedule: TowerSchedule {
                p: p_alpha.map(|x| x.0),
                alpha: p_alpha.map(|x| x.1),
                rho: rho.to_vec(),
                eps: eps.to_vec(),
                eps_bar: eps_bar.to_vec(),
            },
            cell_cache: std::sync::RwLock::new(std::collections::HashMap::new()),
        });
        // width certification
        for j in 1..=k {
            if core.width(j) > rho[j - 1] + 1e-12 {
                return Err(Error::Width {
                    want: rho[j - 1],
                    detail: format!("level {j} width {}", core.width(j)),
                });
            }
        }

        let mut a_targets: Vec<DynTarget> = vec![Arc::new(CubeBoundary { n })];
        for l in 2..=k {
            a_targets.push(Arc::new(ShellTarget::new(core.clone(), l, eps[l - 2])));
        }
        let mut retractions = Vec::with_capacity(k);
        for l in 1..=k {
            let profile = Profile { eps: eps[l - 1], eps_bar: eps_bar[l - 1] };
            let r = if l == 1 {
                Retraction::Collar { n, profile }
            } else {
                Retraction::Nearest { target: a_targets[l - 1].clone(), profile }
            };
            retractions.push(Arc::new(r));
        }
        let stacks = (1..=k)
            .map(|kk| Arc::new(RetractionStack::new(retractions[..kk].to_vec())))
            .collect();
        Ok(SkeletonTower { core, a_targets, retractions, stacks })
    }

    /// Spec-shaped constructor taking the triangulated boundary: validates it
    /// is a grid triangulation of the cube boundary with width <= rho_1.
    pub fn from_boundary(
        boundary: &EuclideanComplex,
        rho: &[f64],
        eps: &[f64],
        eps_bar: &[f64],
    ) -> Result<SkeletonTower> {
        let n = boundary.n;
        let on_boundary = |p: &Point| CubeBoundary::depth(p).abs() <= 1e-12;
        if !boundary.vertices.iter().all(on_boundary) {
            return Err(Error::InvalidInput("boundary complex must lie on the cube boundary".into()));
        }
        if boundary.width() > rho[0] + 1e-12 {
            return Err(Error::Width {
                want: rho[0],
                detail: format!("boundary width {}", boundary.width()),
            });
        }
        Self::build(n, rho, eps, eps_bar, None)
    }

    pub fn n(&self) -> usize {
        self.core.n
    }

    pub fn a_target(&self, l: usize) -> &DynTarget {
        &self.a_targets[l - 1]
    }

    pub fn stack(&self, k: usize) -> &Arc<RetractionStack> {
        &self.stacks[k - 1]
    }

    /// `R_k(x)` as a fiber projection (only meaningful within `N_k`).
    pub fn fiber_point(&self, k: usize, x: &Point) -> Point {
        self.stacks[k - 1].apply(x)
    }

    /// Fiber owner at level k: the Borel owner cell of `r_k(x)`, when `x`
    /// lies in `N_k`.
    pub fn fiber_owner(&self, k: usize, x: &Point) -> Option<CellKey> {
        let eps = self.core.schedule.eps[k - 1];
        let d = self.a_targets[k - 1].dist_capped(x, eps);
        if d >= eps {
            return None;
        }
        let y = self.fiber_point(k, x);
        self.core.owner_cell(k, &y, 1e-9)
    }

    /// Serialize the tower header (schedule block + level summaries).
    pub fn to_json(&self) -> serde_json::Value {
        let c = &self.core;
        serde_json::json!({
            "n": c.n,
            "m1": c.m1,
            "factors": c.factors,
            "schedule": {
                "p": c.schedule.p,
                "alpha": c.schedule.alpha,
                "rho": c.schedule.rho,
                "eps": c.schedule.eps,
                "eps_bar": c.schedule.eps_bar,
            },
            "levels": (1..=c.n).map(|j| serde_json::json!({
                "j": j,
                "dim": c.cell_dim(j),
                "res": c.level_res(j),
                "width": c.width(j),
            })).collect::<Vec<_>>(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// n=4 tower with m1=4, f2=2 (interleaved schedule values).
    pub(crate) fn small_tower4() -> SkeletonTower {
        SkeletonTower::build(
            4,
            &[0.22, 0.055],
            &[0.24, 0.066],
            &[0.27, 0.09],
            None,
        )
        .unwrap()
    }

    #[test]
    fn level1_counts_and_dims() {
        let t = small_tower4();
        let c = &t.core;
        assert_eq!(c.m1, 8);
        let cells = c.enumerate_level(1).unwrap();
        assert_eq!(cells.len(), 8 * 512);
        assert_eq!(c.cell_dim(1), 3);
        assert_eq!(c.cell_dim(2), 2);
        assert_eq!(c.cell_dim(3), 1);
        assert_eq!(c.cell_dim(4), 0);
        assert_eq!(c.level_res(3), c.level_res(2));
        assert_eq!(c.level_res(4), c.level_res(2));
    }

    #[test]
    fn single_cell_facets_top_simplices() {
        // m1 = 1: 8 cells; 8*(top simplices per facet) = 8*3! = 48
        let t = SkeletonTower::build(
            4,
            &[3f64.sqrt(), 0.3],
            &[2.0, 0.4],
            &[2.5, 0.5],
            None,
        )
        .unwrap();
        assert_eq!(t.core.m1, 1);
        assert_eq!(t.core.enumerate_level(1).unwrap().len(), 8);
        assert_eq!(t.core.top_simplex_count(1).unwrap(), 48);
    }

    #[test]
    fn subcell_count_canonical_96() {
        // f2 = 4 between levels 1 and 2: 2*3*4^2 = 96 level-2 cells per level-1 cell
        let t = SkeletonTower::build(
            4,
            &[0.44, 0.109],
            &[0.45, 0.13],
            &[0.48, 0.20],
            None,
        )
        .unwrap();
        assert_eq!(t.core.m1, 4);
        assert_eq!(t.core.factors, vec![4]);
        let d = t.core.enumerate_level(1).unwrap()[0];
        assert_eq!(t.core.count_subcells(1, &d, 2).unwrap(), 96);
        assert_eq!(t.core.count_subcells(1, &d, 1).unwrap(), 1);
    }

    #[test]
    fn subcells_match_brute_force_on_small_tower() {
        let t = small_tower4();
        let c = &t.core;
        let all2 = c.enumerate_level(2).unwrap();
        for d in c.enumerate_level(1).unwrap().iter().take(5) {
            let b = c.cell_box(1, d);
            let brute = all2
                .iter()
                .filter(|cc| {
                    let cb = c.cell_box(2, cc);
                    (0..c.n).all(|ax| cb.lo[ax] >= b.lo[ax] - 1e-12 && cb.hi[ax] <= b.hi[ax] + 1e-12)
                })
                .count() as u64;
            assert_eq!(c.count_subcells(1, d, 2).unwrap(), brute);
        }
    }

    #[test]
    fn tower_nesting_every_cell_in_parent() {
        let t = small_tower4();
        let c = &t.core;
        for j in 2..=4 {
            for cell in c.enumerate_level(j).unwrap() {
                let cb = c.cell_box(j, &cell);
                let parents = c.cells_near(j - 1, &cb.lo[..c.n], &cb.hi[..c.n], 1e-9);
                let ok = parents.iter().any(|pk| {
                    let pb = c.cell_box(j - 1, pk);
                    (0..c.n).all(|ax| {
                        cb.lo[ax] >= pb.lo[ax] - 1e-12 && cb.hi[ax] <= pb.hi[ax] + 1e-12
                    })
                });
                assert!(ok, "level {j} cell {cell:?} not nested");
            }
        }
    }

    #[test]
    fn borel_partition_unique_owner() {
        use rand::{Rng, SeedableRng};
        let t = small_tower4();
        let c = &t.core;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let cells2 = c.enumerate_level(2).unwrap();
        for _ in 0..10_000 {
            let cell = cells2[rng.gen_range(0..cells2.len())];
            let b = c.cell_box(2, &cell);
            let mut x = [0.0; MAX_DIM];
            for ax in 0..c.n {
                x[ax] = b.lo[ax] + rng.gen_range(0.0..=1.0) * (b.hi[ax] - b.lo[ax]);
            }
            let p = Point::from_slice(&x[..c.n]);
            let owner = c.owner_cell(2, &p, 1e-9);
            assert!(owner.is_some());
            let all = c.cells_containing(2, &p, 1e-9);
            assert_eq!(owner.unwrap(), *all.iter().min().unwrap());
        }
    }

    #[test]
    fn width_certified() {
        let t = small_tower4();
        for j in 1..=2 {
            assert!(t.core.width(j) <= t.core.schedule.rho[j - 1] + 1e-12);
        }
    }

    #[test]
    fn shell_target_distance_sanity() {
        let t = small_tower4();
        // A_2 contains level-2 points (collar depth 0) and their extrusions
        let a2 = t.a_target(2);
        // a point on a level-2 plane intersection: x0=0 (boundary), x1 on the
        // coarse lattice (res1 8 -> 0.5), free elsewhere
        let p = Point::from_slice(&[0.0, 0.5, 0.3, 0.6]);
        assert!(a2.dist(&p) < 1e-9, "dist {}", a2.dist(&p));
        // extruded inward along the collar ray stays on the shell up to depth eps_1
        let c = CubeCollar { n: 4 };
        let q = c.extrude(&p, 0.2);
        assert!(a2.dist(&q) < 1e-9, "dist {}", a2.dist(&q));
        // beyond the extrusion depth the distance is positive
        let deep = c.extrude(&p, 0.40);
        assert!(a2.dist(&deep) > 0.01);
    }

    #[test]
    fn fiber_owner_matches_expected_cell() {
        let t = small_tower4();
        // a point just inside a facet, generic position
        let x = Point::from_slice(&[0.33, 0.52, 0.71, 0.05]);
        let d1 = t.core.schedule.eps[0];
        assert!(CubeBoundary::depth(&x) < d1);
        let owner = t.fiber_owner(1, &x).unwrap();
        // r_1 is the collar projection; its owner contains the projected point
        let y = CubeCollar { n: 4 }.project(&x);
        let b = t.core.cell_box(1, &owner);
        assert!(b.contains(&y, 1e-9));
    }
}
