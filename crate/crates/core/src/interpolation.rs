//! Rescaling coefficients, homothety stacks, and the interpolated chains
//! assembled from the localized shell pieces.
//!
//! The interpolated chain is a mod-2 sum over multi-indices of homothety
//! images of localized pieces. Pieces are found by a single partition pass
//! per segment (all band crossings and fiber transitions at once), grouped
//! by their composite affine map, summed at the restriction level, and
//! pushed through the retraction stack once per group: identities such as
//! threshold recovery then hold bitwise, not just within tolerance.

use crate::chains::{cone, Chain0, Chain1, Segment};
use crate::complex::tower::{CellKey, SkeletonTower};
use crate::complex::Point;
use crate::cones::assign_point;
use crate::cuts::CutSchedule;
use crate::error::Result;
use crate::geometry::{pushforward, Affine, PointMap};
use std::collections::BTreeMap;
use std::sync::Arc;

/// Rescaling coefficients, evaluated on multi-index prefixes
/// `((i_1,D_1),...,(i_k,D_k))`. Unspecified keys default to 1 (fully kept).
#[derive(Clone)]
pub enum MuCoefficients {
    AllOnes,
    /// 1 when `i_j <= threshold[j]` for every level j of the prefix, else 0.
    Threshold(Vec<usize>),
    /// Explicit table with a default for missing keys.
    Table { map: Arc<BTreeMap<MuKeyOwned, f64>>, default: f64 },
    /// Arbitrary evaluator (used by the sweep's time-dependent schedules).
    Eval(Arc<dyn Fn(&[(usize, Option<CellKey>)]) -> f64 + Send + Sync>),
}

pub type MuKeyOwned = Vec<(usize, Option<CellKey>)>;

impl MuCoefficients {
    /// The coefficient for a prefix; forced to 1 when the last index is 1.
    pub fn mu(&self, prefix: &[(usize, Option<CellKey>)]) -> f64 {
        let last = prefix.last().expect("nonempty prefix");
        if last.0 == 1 {
            return 1.0;
        }
        let v = match self {
            MuCoefficients::AllOnes => 1.0,
            MuCoefficients::Threshold(t) => {
                let k = prefix.len();
                if prefix.iter().take(k).enumerate().all(|(j, e)| e.0 <= t[j]) {
                    1.0
                } else {
                    0.0
                }
            }
            MuCoefficients::Table { map, default } => {
                map.get(prefix).copied().unwrap_or(*default)
            }
            MuCoefficients::Eval(f) => f(prefix),
        };
        v.clamp(0.0, 1.0)
    }

    /// Running product `mu_tilde`: product of `mu` over the last index
    /// `j = 1..=i_k` with the same prefix and cell; 1 at `i_k = 1`, 0 at
    /// `i_k = q + 1`.
    pub fn mu_tilde(
        &self,
        prefix: &[(usize, Option<CellKey>)],
        cell: Option<CellKey>,
        i_k: usize,
        q: usize,
    ) -> f64 {
        if i_k == q + 1 {
            return 0.0;
        }
        let mut acc = 1.0;
        let mut key: MuKeyOwned = prefix.to_vec();
        key.push((1, None));
        for j in 2..=i_k {
            let last = key.last_mut().expect("pushed");
            *last = (j, cell);
            acc *= self.mu(&key);
        }
        acc
    }
}

/// Key of one localized shell piece: per level the shell index `i_j` and,
/// when `i_j >= 2`, the owner cell.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub struct PieceKey {
    pub entries: MuKeyOwned,
}

impl PieceKey {
    pub fn prefix(&self, k: usize) -> &[(usize, Option<CellKey>)] {
        &self.entries[..k]
    }

    /// Deepest level with a nontrivial index; 0 when all indices are 1.
    pub fn depth(&self) -> usize {
        self.entries.iter().rposition(|e| e.0 >= 2).map(|j| j + 1).unwrap_or(0)
    }
}

/// The full decomposition of a chain into localized shell pieces for a cut
/// schedule: one partition pass per segment.
pub struct Decomposition {
    pub pieces: BTreeMap<PieceKey, Chain1>,
    pub q: usize,
    pub levels: usize,
}

/// Partition `tau` into the localized shell pieces of `schedule`.
///
/// Sub-segments whose distance to some level is below the innermost cut are
/// dropped (they lie inside the removed tubular neighborhoods).
pub fn decompose(
    tau: &Chain1,
    tower: &Arc<SkeletonTower>,
    schedule: &CutSchedule,
) -> Decomposition {
    let k = schedule.levels();
    let q = schedule.q();
    let mut pieces: BTreeMap<PieceKey, Vec<Segment>> = BTreeMap::new();
    for seg in tau.segments() {
        let mut ts = vec![0.0, 1.0];
        // band boundaries at every level and cut value
        for j in 1..=k {
            let target = tower.a_target(j);
            for &s in &schedule.s[j - 1] {
                for (a, b) in target.seg_below(seg, s) {
                    if a > 0.0 && a < 1.0 {
                        ts.push(a);
                    }
                    if b > 0.0 && b < 1.0 {
                        ts.push(b);
                    }
                }
            }
            // fiber ownership transitions (relevant inside shells, harmless
            // elsewhere: they subdivide without changing classification)
            crate::regions::fiber_transition_params(tower, j, seg, &mut ts);
        }
        ts.sort_by(|a, b| a.total_cmp(b));
        ts.dedup_by(|a, b| (*a - *b).abs() < 1e-13);
        let pts: Vec<Point> = ts
            .iter()
            .map(|&t| {
                if t == 0.0 {
                    seg.a
                } else if t == 1.0 {
                    seg.b
                } else {
                    seg.eval(t)
                }
            })
            .collect();
        'piece: for w in 0..ts.len() - 1 {
            let tm = 0.5 * (ts[w] + ts[w + 1]);
            let mid = seg.eval(tm);
            let mut entries: MuKeyOwned = Vec::with_capacity(k);
            for j in 1..=k {
                let row = &schedule.s[j - 1];
                let d = tower.a_target(j).dist_capped(&mid, row[0] + 1.0);
                if d > row[0] {
                    entries.push((1, None));
                } else {
                    // find the shell s^i < d < s^{i-1}
                    let mut idx = None;
                    for i in 2..=q {
                        if d > row[i - 1] && d < row[i - 2] {
                            idx = Some(i);
                            break;
                        }
                    }
                    let Some(i) = idx else {
                        continue 'piece; // inside the innermost neighborhood
                    };
                    let Some(owner) = tower.fiber_owner(j, &mid) else {
                        continue 'piece; // off N_j: cannot happen for true shells
                    };
                    entries.push((i, Some(owner)));
                }
            }
            if let Some(s) = Segment::new(pts[w], pts[w + 1]) {
                pieces.entry(PieceKey { entries }).or_default().push(s);
            }
        }
    }
    Decomposition {
        pieces: pieces
            .into_iter()
            .map(|(key, segs)| (key, Chain1::from_segments(segs)))
            .collect(),
        q,
        levels: k,
    }
}

/// The composite homothety `T` of a piece: level-j factor centered at the
/// cell anchor with ratio `mu_tilde` (identity at shell index 1).
pub fn composite_map(
    key: &PieceKey,
    tower: &SkeletonTower,
    mu: &MuCoefficients,
    q: usize,
) -> Affine {
    let n = tower.core.n;
    let mut acc = Affine::identity(n);
    for (j0, &(i, cell)) in key.entries.iter().enumerate() {
        if i >= 2 {
            let cell = cell.expect("cell present when i >= 2");
            let ratio = mu.mu_tilde(key.prefix(j0), Some(cell), i, q);
            let center = tower.core.cell_anchor(j0 + 1, &cell);
            acc = acc.compose(&Affine::homothety(&center, ratio));
        }
    }
    acc
}

/// Result of assembling the interpolation.
pub struct Interpolated {
    /// `A(tau; s, mu)`
    pub a: Chain1,
    /// `C(tau; s, mu)` (no cones)
    pub c: Chain1,
    /// `Cone_l(tau; s, mu)` per level l = 1..n-1
    pub cones: Vec<Chain1>,
    /// number of nonempty localized pieces
    pub piece_count: usize,
}

/// Assemble `A(tau; s, mu)` from a decomposition: group pieces by composite
/// map, sum at the restriction level, push once per group, cone the group
/// boundary, then apply the affine map.
pub fn interpolate_decomposed(
    dec: &Decomposition,
    tower: &Arc<SkeletonTower>,
    mu: &MuCoefficients,
    tol: f64,
) -> Result<Interpolated> {
    let n = tower.core.n;
    let kmax = dec.levels;
    let stack = tower.stack(kmax);
    // group pieces by affine-map bits
    let mut groups: BTreeMap<(u64, [u64; crate::complex::MAX_DIM]), (Affine, Vec<&Chain1>)> =
        BTreeMap::new();
    let mut piece_count = 0usize;
    for (key, chain) in &dec.pieces {
        if chain.is_empty() {
            continue;
        }
        piece_count += 1;
        let t = composite_map(key, tower, mu, dec.q);
        if t.scale == 0.0 {
            continue; // collapsed to a point: empty contribution
        }
        groups.entry(t.key_bits()).or_insert_with(|| (t, Vec::new())).1.push(chain);
    }
    let mut c_parts: Vec<Chain1> = Vec::new();
    let mut cone_parts: Vec<Vec<Chain1>> = vec![Vec::new(); n - 1];
    for (_, (t, chains)) in groups {
        let cbar_group = Chain1::sum(chains.iter().copied());
        let c_group = pushforward(stack.as_ref(), &cbar_group, tol);
        let bd_group = cbar_group.boundary().map(|p| stack.apply(p));
        // cones per level from the mapped boundary
        let mut level_bases: BTreeMap<(usize, CellKey), Vec<Point>> = BTreeMap::new();
        for p in bd_group.points() {
            if let Some((l, cell)) = assign_point(tower, p) {
                if l < n {
                    level_bases.entry((l, cell)).or_default().push(*p);
                }
            } else {
                return Err(crate::error::Error::SupportViolation(format!(
                    "interpolation boundary point {p:?} off the tower"
                )));
            }
        }
        c_parts.push(c_group.map_points(|p| t.apply_point(p)));
        for ((l, cell), pts) in level_bases {
            let center = tower.core.cell_anchor(l, &cell);
            let cn = cone(&center, &Chain0::from_points(pts));
            cone_parts[l - 1].push(cn.map_points(|p| t.apply_point(p)));
        }
    }
    let c = Chain1::sum(c_parts.iter());
    let cones: Vec<Chain1> = cone_parts.iter().map(|v| Chain1::sum(v.iter())).collect();
    let mut a = c.clone();
    for cn in &cones {
        a = a.add(cn);
    }
    Ok(Interpolated { a, c, cones, piece_count })
}

/// One-call interface: decompose then assemble.
pub fn interpolate(
    tau: &Chain1,
    tower: &Arc<SkeletonTower>,
    schedule: &CutSchedule,
    mu: &MuCoefficients,
    tol: f64,
) -> Result<Interpolated> {
    let dec = decompose(tau, tower, schedule);
    interpolate_decomposed(&dec, tower, mu, tol)
}

/// The per-cell boundary-mass table used by the cone-mass certificates: for
/// a level k, entries `(prefix I_(k-1), D_k, i_k) -> mass(∂C(tau;
/// (Δ_prefix, s_k^{i_k}, 1-tail))_{D̄_{k-1}} ⌞ interior(D_k))`.
pub struct ConeTable {
    pub level: usize,
    pub entries: BTreeMap<(MuKeyOwned, CellKey, usize), f64>,
}

/// Build the table for level k from a decomposition (only nonempty rows).
pub fn cone_table(
    dec: &Decomposition,
    tower: &Arc<SkeletonTower>,
    level: usize,
) -> ConeTable {
    let kmax = dec.levels;
    let stack = tower.stack(kmax);
    let q = dec.q;
    // mapped boundary points of each piece with trailing indices 1,
    // accumulated per (prefix, shell index at `level`)
    let mut by_prefix: BTreeMap<(MuKeyOwned, usize), Vec<Point>> = BTreeMap::new();
    for (key, chain) in &dec.pieces {
        if chain.is_empty() {
            continue;
        }
        // deeper levels must be at shell index 1
        if key.entries.iter().skip(level).any(|e| e.0 != 1) {
            continue;
        }
        let i_k = key.entries[level - 1].0;
        let prefix = key.prefix(level - 1).to_vec();
        let pts = chain.boundary().map(|p| stack.apply(p));
        by_prefix
            .entry((prefix, i_k))
            .or_default()
            .extend(pts.points().iter().cloned());
    }
    // cumulative over i' <= i: the at-cut form is the union of shells
    let mut entries: BTreeMap<(MuKeyOwned, CellKey, usize), f64> = BTreeMap::new();
    let mut prefixes: Vec<MuKeyOwned> = by_prefix.keys().map(|(p, _)| p.clone()).collect();
    prefixes.sort();
    prefixes.dedup();
    for prefix in prefixes {
        let mut acc: Vec<Point> = Vec::new();
        for i in 1..=q {
            if let Some(pts) = by_prefix.get(&(prefix.clone(), i)) {
                acc.extend(pts.iter().cloned());
            }
            // mod-2 reduce, then count points interior to each level-k cell
            let reduced = Chain0::from_points(acc.clone());
            let mut per_cell: BTreeMap<CellKey, u64> = BTreeMap::new();
            for p in reduced.points() {
                if let Some((l, cell)) = assign_point(tower, p) {
                    if l == level {
                        *per_cell.entry(cell).or_default() += 1;
                    }
                }
            }
            for (cell, count) in per_cell {
                entries.insert((prefix.clone(), cell, i), count as f64);
            }
        }
    }
    ConeTable { level, entries }
}

/// The certified upper bound for `mass(Cone_k(tau; s, mu))`:
/// `sum rho_k (mu_tilde_i - mu_tilde_{i+1}) * table(prefix, D_k, i)`.
pub fn cone_k_bound(
    table: &ConeTable,
    tower: &SkeletonTower,
    mu: &MuCoefficients,
    q: usize,
) -> f64 {
    let rho = tower.core.schedule.rho[table.level - 1];
    let mut acc = 0.0;
    for ((prefix, cell, i), mass) in &table.entries {
        let a = mu.mu_tilde(prefix, Some(*cell), *i, q);
        let b = mu.mu_tilde(prefix, Some(*cell), *i + 1, q);
        acc += rho * (a - b) * mass;
    }
    acc
}

/// `Cone_k(tau; s, mu)` by the telescoped route: per (prefix, D_k, i_k),
/// cone the Δ-piece boundary interior to D_k from the cell anchor, rescale
/// by the level-k homothety and the prefix composite.
pub fn cone_k_telescoped(
    dec: &Decomposition,
    tower: &Arc<SkeletonTower>,
    mu: &MuCoefficients,
    level: usize,
) -> Result<Chain1> {
    let kmax = dec.levels;
    let stack = tower.stack(kmax);
    let q = dec.q;
    let mut parts: Vec<Chain1> = Vec::new();
    for (key, chain) in &dec.pieces {
        if chain.is_empty() {
            continue;
        }
        if key.entries.iter().skip(level).any(|e| e.0 != 1) {
            continue;
        }
        let i_k = key.entries[level - 1].0;
        let prefix = key.prefix(level - 1);
        // composite of the prefix levels only
        let mut t_prefix = Affine::identity(tower.core.n);
        for (j0, &(i, cell)) in prefix.iter().enumerate() {
            if i >= 2 {
                let cell = cell.expect("cell");
                let ratio = mu.mu_tilde(&key.entries[..j0], Some(cell), i, q);
                t_prefix =
                    t_prefix.compose(&Affine::homothety(&tower.core.cell_anchor(j0 + 1, &cell), ratio));
            }
        }
        let bd = chain.boundary().map(|p| stack.apply(p));
        let mut per_cell: BTreeMap<CellKey, Vec<Point>> = BTreeMap::new();
        for p in bd.points() {
            if let Some((l, cell)) = assign_point(tower, p) {
                if l == level {
                    per_cell.entry(cell).or_default().push(*p);
                }
            }
        }
        for (cell, pts) in per_cell {
            let center = tower.core.cell_anchor(level, &cell);
            let ratio = mu.mu_tilde(prefix, Some(cell), i_k, q);
            if ratio == 0.0 {
                continue;
            }
            let t_local = Affine::homothety(&center, ratio);
            let t_full = t_prefix.compose(&t_local);
            let cn = cone(&center, &Chain0::from_points(pts));
            parts.push(cn.map_points(|p| t_full.apply_point(p)));
        }
    }
    Ok(Chain1::sum(parts.iter()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cuts::{cut, find_admissible_tuple};

    fn tower4() -> Arc<SkeletonTower> {
        Arc::new(
            SkeletonTower::build(4, &[0.22, 0.055], &[0.24, 0.066], &[0.27, 0.09], None).unwrap(),
        )
    }

    fn schedule_for(tau: &Chain1, t: &Arc<SkeletonTower>, q: usize, seed: u64) -> CutSchedule {
        let (picks, _) = find_admissible_tuple(tau, t, &[], seed).unwrap();
        let rows: Vec<Vec<f64>> = picks
            .iter()
            .map(|&s| (0..q).map(|i| s * (1.0 - 0.35 * i as f64)).collect())
            .collect();
        let certs = rows.iter().map(|r| vec![0; r.len()]).collect();
        CutSchedule { s: rows, certificates: certs }
    }

    #[test]
    fn mu_tilde_products() {
        // mu = (1, 0.5, 0.5) at indices 1..3 -> tilde at 3 is 0.25
        let mut map = BTreeMap::new();
        map.insert(vec![(2usize, None)], 0.5);
        map.insert(vec![(3usize, None)], 0.5);
        let mu = MuCoefficients::Table { map: Arc::new(map), default: 1.0 };
        assert_eq!(mu.mu_tilde(&[], None, 1, 3), 1.0);
        assert_eq!(mu.mu_tilde(&[], None, 3, 3), 0.25);
        assert_eq!(mu.mu_tilde(&[], None, 4, 3), 0.0);
        assert_eq!(MuCoefficients::AllOnes.mu_tilde(&[], None, 3, 3), 1.0);
    }

    #[test]
    fn threshold_recovers_direct_cut_exactly() {
        let t = tower4();
        let tau = crate::cuts::random_chain(4, 5, 12);
        let q = 2;
        let sched = schedule_for(&tau, &t, q, 9);
        let dec = decompose(&tau, &t, &sched);
        for i0 in [[1usize, 1], [2, 1], [1, 2], [2, 2]] {
            let mu = MuCoefficients::Threshold(i0.to_vec());
            let interp = interpolate_decomposed(&dec, &t, &mu, 1e-9).unwrap();
            let direct = cut(&tau, &t, &[sched.s[0][i0[0] - 1], sched.s[1][i0[1] - 1]], 1e-9);
            assert_eq!(interp.c, direct, "threshold {i0:?}");
        }
    }

    #[test]
    fn q1_single_term_regardless_of_mu() {
        let t = tower4();
        let tau = crate::cuts::random_chain(4, 6, 10);
        let sched = schedule_for(&tau, &t, 1, 3);
        let dec = decompose(&tau, &t, &sched);
        let a1 = interpolate_decomposed(&dec, &t, &MuCoefficients::AllOnes, 1e-9).unwrap();
        let a2 = interpolate_decomposed(&dec, &t, &MuCoefficients::Threshold(vec![1, 1]), 1e-9)
            .unwrap();
        assert_eq!(a1.a, a2.a);
    }

    #[test]
    fn mass_certificate_for_c() {
        let t = tower4();
        let tau = crate::cuts::random_chain(4, 8, 16);
        let q = 2;
        let sched = schedule_for(&tau, &t, q, 11);
        let dec = decompose(&tau, &t, &sched);
        let eps = &t.core.schedule.eps;
        let eb = &t.core.schedule.eps_bar;
        let one_plus_beta: f64 = (0..2).map(|l| 1.0 / (1.0 - eps[l] / eb[l])).product();
        for mu in [
            MuCoefficients::AllOnes,
            MuCoefficients::Threshold(vec![2, 1]),
            MuCoefficients::Threshold(vec![1, 2]),
        ] {
            let out = interpolate_decomposed(&dec, &t, &mu, 1e-9).unwrap();
            let bound = one_plus_beta * tau.mass() + 1e-6 * tau.mass();
            assert!(
                out.c.mass() <= bound,
                "mass {} vs bound {bound}",
                out.c.mass()
            );
        }
    }

    #[test]
    fn cone_routes_agree_and_bound_holds() {
        let t = tower4();
        let tau = crate::cuts::random_chain(4, 13, 14);
        let q = 2;
        let sched = schedule_for(&tau, &t, q, 17);
        let dec = decompose(&tau, &t, &sched);
        // a nonincreasing random mu-tilde: table with values in (0,1)
        let mut map = BTreeMap::new();
        for (key, _) in dec.pieces.iter() {
            for k in 1..=2usize {
                let pfx = key.entries[..k].to_vec();
                if pfx[k - 1].0 >= 2 {
                    map.insert(pfx, 0.6);
                }
            }
        }
        let mu = MuCoefficients::Table { map: Arc::new(map), default: 1.0 };
        let out = interpolate_decomposed(&dec, &t, &mu, 1e-9).unwrap();
        for level in 1..=2usize {
            let tele = cone_k_telescoped(&dec, &t, &mu, level).unwrap();
            assert_eq!(out.cones[level - 1], tele, "level {level}");
            let table = cone_table(&dec, &t, level);
            let bound = cone_k_bound(&table, &t, &mu, q);
            assert!(
                out.cones[level - 1].mass() <= bound + 1e-9,
                "level {level}: cone mass {} vs bound {bound}",
                out.cones[level - 1].mass()
            );
        }
    }
}
