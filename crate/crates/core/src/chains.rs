//! Exact mod-2 algebra of PL 0- and 1-chains.
//!
//! A [`Chain1`] is kept in a canonical form: segments are grouped by
//! supporting line and reduced by symmetric difference of their 1-D parameter
//! intervals, so collinear overlaps cancel and adjacent collinear pieces
//! merge. Canonical forms compare bitwise, which is what makes the mod-2
//! identities downstream (boundary decompositions, shell telescoping,
//! localization reconstruction) testable as exact equalities.
//!
//! Interval endpoints always come from stored input points — merging never
//! synthesizes coordinates — so two computations that produce the same point
//! set produce the same canonical chain.

use crate::complex::{Point, MAX_DIM};
use serde::{Deserialize, Serialize};

/// Gap threshold for clustering segments onto a common supporting line.
/// Sits between f64 round-off on derived points (~1e-13) and the smallest
/// geometric separations in the pipeline (>=1e-6).
const LINE_CLUSTER_TOL: f64 = 1e-9;

/// An unordered pair of distinct points, stored with `a < b` (bitwise order).
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug, Hash)]
pub struct Segment {
    pub a: Point,
    pub b: Point,
}

impl Segment {
    pub fn new(p: Point, q: Point) -> Option<Segment> {
        if p == q {
            return None;
        }
        if p < q {
            Some(Segment { a: p, b: q })
        } else {
            Some(Segment { a: q, b: p })
        }
    }

    pub fn length(&self) -> f64 {
        self.a.dist(&self.b)
    }

    pub fn dim(&self) -> usize {
        self.a.dim()
    }

    pub fn eval(&self, t: f64) -> Point {
        self.a.lerp(&self.b, t)
    }

    pub fn midpoint(&self) -> Point {
        self.eval(0.5)
    }
}

/// A finite mod-2 0-chain: a set of points (each with unit mass).
#[derive(Clone, PartialEq, Eq, Debug, Default)]
pub struct Chain0 {
    pts: Vec<Point>,
}

impl Chain0 {
    pub fn empty() -> Self {
        Chain0 { pts: Vec::new() }
    }

    /// Reduce a multiset of points mod 2.
    pub fn from_points(mut pts: Vec<Point>) -> Self {
        pts.sort_unstable();
        let mut out = Vec::with_capacity(pts.len());
        let mut i = 0;
        while i < pts.len() {
            let mut j = i + 1;
            while j < pts.len() && pts[j] == pts[i] {
                j += 1;
            }
            if (j - i) % 2 == 1 {
                out.push(pts[i]);
            }
            i = j;
        }
        Chain0 { pts: out }
    }

    pub fn points(&self) -> &[Point] {
        &self.pts
    }

    pub fn mass(&self) -> f64 {
        self.pts.len() as f64
    }

    pub fn is_empty(&self) -> bool {
        self.pts.is_empty()
    }

    pub fn add(&self, other: &Chain0) -> Chain0 {
        let mut pts = self.pts.clone();
        pts.extend_from_slice(&other.pts);
        Chain0::from_points(pts)
    }

    pub fn filter<F: Fn(&Point) -> bool>(&self, keep: F) -> Chain0 {
        Chain0 { pts: self.pts.iter().filter(|p| keep(p)).cloned().collect() }
    }

    pub fn map<F: Fn(&Point) -> Point>(&self, f: F) -> Chain0 {
        Chain0::from_points(self.pts.iter().map(|p| f(p)).collect())
    }
}

/// A finite mod-2 PL 1-chain in canonical form.
#[derive(Clone, PartialEq, Eq, Debug, Default)]
pub struct Chain1 {
    segs: Vec<Segment>,
}

impl Chain1 {
    pub fn empty() -> Self {
        Chain1 { segs: Vec::new() }
    }

    pub fn from_segments(raw: Vec<Segment>) -> Self {
        Chain1 { segs: canonicalize(raw) }
    }

    pub fn from_endpoints(pairs: &[(Point, Point)]) -> Self {
        Self::from_segments(pairs.iter().filter_map(|(p, q)| Segment::new(*p, *q)).collect())
    }

    /// Open polyline through the given points.
    pub fn polyline(pts: &[Point]) -> Self {
        let segs = pts.windows(2).filter_map(|w| Segment::new(w[0], w[1])).collect();
        Self::from_segments(segs)
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segs
    }

    pub fn is_empty(&self) -> bool {
        self.segs.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.segs.first().map(|s| s.dim())
    }

    /// Total length, summed in canonical order.
    pub fn mass(&self) -> f64 {
        let mut sum = 0.0;
        let mut c = 0.0; // Kahan compensation
        for s in &self.segs {
            let y = s.length() - c;
            let t = sum + y;
            c = (t - sum) - y;
            sum = t;
        }
        sum
    }

    /// Mod-2 sum; an involution: `a.add(b).add(b) == a`.
    pub fn add(&self, other: &Chain1) -> Chain1 {
        let mut raw = self.segs.clone();
        raw.extend_from_slice(&other.segs);
        Chain1::from_segments(raw)
    }

    /// Mod-2 sum of endpoints.
    pub fn boundary(&self) -> Chain0 {
        let mut pts = Vec::with_capacity(self.segs.len() * 2);
        for s in &self.segs {
            pts.push(s.a);
            pts.push(s.b);
        }
        Chain0::from_points(pts)
    }

    /// Image under a pointwise map applied to endpoints (exact for affine
    /// maps; curved maps belong to the pushforward machinery).
    pub fn map_points<F: Fn(&Point) -> Point>(&self, f: F) -> Chain1 {
        Chain1::from_segments(
            self.segs.iter().filter_map(|s| Segment::new(f(&s.a), f(&s.b))).collect(),
        )
    }

    pub fn sum<'a, I: IntoIterator<Item = &'a Chain1>>(parts: I) -> Chain1 {
        let mut raw = Vec::new();
        for c in parts {
            raw.extend_from_slice(&c.segs);
        }
        Chain1::from_segments(raw)
    }
}

/// Cone from `center` over a 0-chain: one segment per base point.
pub fn cone(center: &Point, base: &Chain0) -> Chain1 {
    Chain1::from_segments(
        base.points().iter().filter_map(|p| Segment::new(*center, *p)).collect(),
    )
}

// --- canonicalization ---------------------------------------------------

fn canonicalize(raw: Vec<Segment>) -> Vec<Segment> {
    let mut segs: Vec<Segment> = raw.into_iter().filter(|s| s.a != s.b).collect();
    if segs.is_empty() {
        return segs;
    }
    segs.sort_unstable();

    let keys: Vec<[f64; 2 * MAX_DIM]> = segs.iter().map(line_key).collect();
    let mut order: Vec<usize> = (0..segs.len()).collect();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    cluster(&keys, &mut order, 0, &mut groups);

    let mut out = Vec::with_capacity(segs.len());
    for group in groups {
        reduce_line_group(&segs, &group, &mut out);
    }
    out.sort_unstable();
    out
}

/// Key = (canonically signed unit direction, foot of the perpendicular from
/// the origin). Segments on the same line get keys equal up to round-off.
fn line_key(seg: &Segment) -> [f64; 2 * MAX_DIM] {
    let n = seg.dim();
    let v = seg.b.sub(&seg.a);
    let len = Point::norm(&v);
    let mut u = [0.0; MAX_DIM];
    for i in 0..n {
        u[i] = v[i] / len;
    }
    // sign: make the largest-magnitude component positive (stable under noise)
    let mut kmax = 0;
    for i in 1..n {
        if u[i].abs() > u[kmax].abs() {
            kmax = i;
        }
    }
    if u[kmax] < 0.0 {
        for x in u.iter_mut() {
            *x = -*x;
        }
    }
    let a = seg.a.coords();
    let proj = Point::dot(a, &u[..n]);
    let mut key = [0.0; 2 * MAX_DIM];
    key[..MAX_DIM].copy_from_slice(&u);
    for i in 0..n {
        key[MAX_DIM + i] = a[i] - proj * u[i];
    }
    key
}

/// Recursive 1-D gap clustering, one key component at a time. Indices whose
/// keys chain within `LINE_CLUSTER_TOL` in every component end up together.
fn cluster(
    keys: &[[f64; 2 * MAX_DIM]],
    idx: &mut [usize],
    comp: usize,
    out: &mut Vec<Vec<usize>>,
) {
    if comp == 2 * MAX_DIM {
        out.push(idx.to_vec());
        return;
    }
    idx.sort_by(|&i, &j| keys[i][comp].total_cmp(&keys[j][comp]).then(i.cmp(&j)));
    let mut start = 0;
    for k in 1..=idx.len() {
        let split = k == idx.len()
            || keys[idx[k]][comp] - keys[idx[k - 1]][comp] > LINE_CLUSTER_TOL;
        if split {
            cluster(keys, &mut idx[start..k], comp + 1, out);
            start = k;
        }
    }
}

/// XOR the parameter intervals of one collinear group and emit the surviving
/// pieces, with endpoints drawn from the stored input points.
fn reduce_line_group(segs: &[Segment], group: &[usize], out: &mut Vec<Segment>) {
    if group.len() == 1 {
        out.push(segs[group[0]]);
        return;
    }
    // anchor: lexicographically smallest endpoint; direction: longest segment
    let mut anchor = segs[group[0]].a;
    let mut longest = group[0];
    for &g in group {
        let s = &segs[g];
        if s.a < anchor {
            anchor = s.a;
        }
        if s.b < anchor {
            anchor = s.b;
        }
        let cmp = s.length().total_cmp(&segs[longest].length());
        if cmp == std::cmp::Ordering::Greater {
            longest = g;
        }
    }
    let mut key = line_key(&segs[longest]);
    let n = segs[longest].dim();
    let u = &mut key[..n];

    // events: (param, point) per endpoint
    let mut events: Vec<(f64, Point)> = Vec::with_capacity(group.len() * 2);
    for &g in group {
        for p in [segs[g].a, segs[g].b] {
            let d = p.sub(&anchor);
            events.push((Point::dot(&d, u), p));
        }
    }
    events.sort_by(|x, y| x.0.total_cmp(&y.0).then_with(|| x.1.cmp(&y.1)));

    let mut parity = false;
    let mut open: Option<Point> = None;
    let mut i = 0;
    while i < events.len() {
        let mut j = i + 1;
        while j < events.len() && events[j].1 == events[i].1 {
            j += 1;
        }
        if (j - i) % 2 == 1 {
            parity = !parity;
            if parity {
                open = Some(events[i].1);
            } else if let Some(p) = open.take() {
                if let Some(s) = Segment::new(p, events[i].1) {
                    out.push(s);
                }
            }
        }
        i = j;
    }
    debug_assert!(!parity, "interval sweep must close");
}

// --- serde ----------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct Chain1Json {
    segments: Vec<[Vec<f64>; 2]>,
}

impl Serialize for Chain1 {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let dto = Chain1Json {
            segments: self
                .segs
                .iter()
                .map(|sg| [sg.a.coords().to_vec(), sg.b.coords().to_vec()])
                .collect(),
        };
        dto.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Chain1 {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let dto = Chain1Json::deserialize(d)?;
        let mut segs = Vec::with_capacity(dto.segments.len());
        for [a, b] in dto.segments {
            let pa = Point::new(&a).map_err(serde::de::Error::custom)?;
            let pb = Point::new(&b).map_err(serde::de::Error::custom)?;
            if let Some(s) = Segment::new(pa, pb) {
                segs.push(s);
            }
        }
        Ok(Chain1::from_segments(segs))
    }
}

#[derive(Serialize, Deserialize)]
struct Chain0Json {
    points: Vec<Vec<f64>>,
}

impl Serialize for Chain0 {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        Chain0Json { points: self.pts.iter().map(|p| p.coords().to_vec()).collect() }
            .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Chain0 {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let dto = Chain0Json::deserialize(d)?;
        let pts = dto
            .points
            .iter()
            .map(|c| Point::new(c).map_err(serde::de::Error::custom))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Chain0::from_points(pts))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(c: &[f64]) -> Point {
        Point::from_slice(c)
    }

    #[test]
    fn self_sum_is_zero() {
        let c = Chain1::polyline(&[pt(&[0.0, 0.0]), pt(&[1.0, 0.5]), pt(&[1.0, 1.0])]);
        assert!(c.add(&c).is_empty());
    }

    #[test]
    fn adjacent_collinear_segments_merge() {
        let a = pt(&[0.0, 0.0]);
        let b = pt(&[0.5, 0.0]);
        let c = pt(&[1.0, 0.0]);
        let s1 = Chain1::from_endpoints(&[(a, b)]);
        let s2 = Chain1::from_endpoints(&[(b, c)]);
        let sum = s1.add(&s2);
        assert_eq!(sum.segments().len(), 1);
        assert_eq!(sum.segments()[0], Segment::new(a, c).unwrap());
    }

    #[test]
    fn collinear_overlap_xor() {
        // [0,1] + [0.5,1.5] on the x-axis -> [0,0.5] u [1,1.5], mass 1.0
        let s1 = Chain1::from_endpoints(&[(pt(&[0.0, 0.0]), pt(&[1.0, 0.0]))]);
        let s2 = Chain1::from_endpoints(&[(pt(&[0.5, 0.0]), pt(&[1.5, 0.0]))]);
        let sum = s1.add(&s2);
        assert_eq!(sum.segments().len(), 2);
        assert!((sum.mass() - 1.0).abs() < 1e-15);
        assert_eq!(sum.segments()[0], Segment::new(pt(&[0.0, 0.0]), pt(&[0.5, 0.0])).unwrap());
        assert_eq!(sum.segments()[1], Segment::new(pt(&[1.0, 0.0]), pt(&[1.5, 0.0])).unwrap());
    }

    #[test]
    fn boundary_of_segment_and_path_and_loop() {
        let a = pt(&[0.0, 0.0]);
        let b = pt(&[1.0, 0.0]);
        let c = pt(&[1.0, 1.0]);
        let d = pt(&[0.0, 1.0]);
        let seg = Chain1::from_endpoints(&[(a, b)]);
        assert_eq!(seg.boundary().points(), &[a, b]);
        let path = Chain1::polyline(&[a, b, c]);
        assert_eq!(path.boundary().points(), &[a, c]);
        let square = Chain1::from_endpoints(&[(a, b), (b, c), (c, d), (d, a)]);
        assert!(square.boundary().is_empty());
    }

    #[test]
    fn diagonal_mass_and_empty_mass() {
        let diag = Chain1::from_endpoints(&[(pt(&[0.0, 0.0]), pt(&[1.0, 1.0]))]);
        assert!((diag.mass() - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(Chain1::empty().mass(), 0.0);
    }

    #[test]
    fn boundary_additivity() {
        let a = Chain1::polyline(&[pt(&[0.0, 0.0]), pt(&[0.3, 0.8]), pt(&[1.0, 0.2])]);
        let b = Chain1::polyline(&[pt(&[0.3, 0.8]), pt(&[0.9, 0.9])]);
        assert_eq!(a.add(&b).boundary(), a.boundary().add(&b.boundary()));
    }

    #[test]
    fn cone_examples() {
        // empty base -> empty chain
        assert!(cone(&pt(&[0.0, 0.0]), &Chain0::empty()).is_empty());
        // 3-4-5 triangle
        let c = cone(&pt(&[0.0, 0.0]), &Chain0::from_points(vec![pt(&[3.0, 4.0])]));
        assert!((c.mass() - 5.0).abs() < 1e-15);
        // duplicated base point cancels mod 2 before coning
        let base = Chain0::from_points(vec![pt(&[3.0, 4.0]), pt(&[3.0, 4.0])]);
        assert!(cone(&pt(&[0.0, 0.0]), &base).is_empty());
    }

    #[test]
    fn chain0_mass_counts_points() {
        let z = Chain0::from_points(vec![pt(&[0.0, 0.0]), pt(&[1.0, 0.0]), pt(&[0.0, 0.0])]);
        assert_eq!(z.mass(), 1.0);
    }

    #[test]
    fn json_round_trip() {
        let c = Chain1::polyline(&[pt(&[0.0, 0.0, 0.0]), pt(&[0.25, 0.5, 1.0])]);
        let s = serde_json::to_string(&c).unwrap();
        assert!(s.contains("segments"));
        let back: Chain1 = serde_json::from_str(&s).unwrap();
        assert_eq!(c, back);
    }
}
