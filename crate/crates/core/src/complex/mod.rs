//! Euclidean simplicial complexes for the domain `M = [0,1]^n`, cubical
//! parameter complexes, and the boundary skeleton tower.

pub mod cubical;
pub mod tower;

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;

pub use cubical::{Cell, CubicalComplex};

/// Maximum ambient dimension handled by the fixed-size point storage.
pub const MAX_DIM: usize = 6;

/// A point of the ambient cube, with up to [`MAX_DIM`] coordinates.
///
/// Equality and ordering are bitwise (total order on the raw f64 bits), so
/// points can key exact mod-2 cancellation.
#[derive(Clone, Copy)]
pub struct Point {
    dim: u8,
    xs: [f64; MAX_DIM],
}

impl Point {
    pub fn new(coords: &[f64]) -> Result<Self> {
        if coords.len() < 2 || coords.len() > MAX_DIM {
            return Err(Error::UnsupportedDimension(coords.len(), "2..=6"));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidInput("non-finite coordinate".into()));
        }
        let mut xs = [0.0; MAX_DIM];
        xs[..coords.len()].copy_from_slice(coords);
        Ok(Point { dim: coords.len() as u8, xs })
    }

    /// Panicking constructor for internal code paths with known-good data.
    pub fn from_slice(coords: &[f64]) -> Self {
        Self::new(coords).expect("valid point")
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    #[inline]
    pub fn coords(&self) -> &[f64] {
        &self.xs[..self.dim as usize]
    }

    #[inline]
    pub fn coord(&self, i: usize) -> f64 {
        self.xs[i]
    }

    pub fn dist(&self, other: &Point) -> f64 {
        debug_assert_eq!(self.dim, other.dim);
        let mut s = 0.0;
        for i in 0..self.dim as usize {
            let d = self.xs[i] - other.xs[i];
            s += d * d;
        }
        s.sqrt()
    }

    pub fn sub(&self, other: &Point) -> Vec<f64> {
        (0..self.dim as usize).map(|i| self.xs[i] - other.xs[i]).collect()
    }

    pub fn add_scaled(&self, dir: &[f64], t: f64) -> Point {
        let mut xs = self.xs;
        for i in 0..self.dim as usize {
            xs[i] += t * dir[i];
        }
        Point { dim: self.dim, xs }
    }

    /// Point between `self` and `b` at parameter `t` (0 at self, 1 at b).
    pub fn lerp(&self, b: &Point, t: f64) -> Point {
        let mut xs = self.xs;
        for i in 0..self.dim as usize {
            xs[i] += t * (b.xs[i] - xs[i]);
        }
        Point { dim: self.dim, xs }
    }

    /// Homothety centered at `c` with ratio `r`.
    pub fn homothety(&self, c: &Point, r: f64) -> Point {
        let mut xs = self.xs;
        for i in 0..self.dim as usize {
            xs[i] = c.xs[i] + r * (xs[i] - c.xs[i]);
        }
        Point { dim: self.dim, xs }
    }

    pub fn norm(v: &[f64]) -> f64 {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }
}

impl PartialEq for Point {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.coords().iter().zip(other.coords()).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}
impl Eq for Point {}

impl PartialOrd for Point {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Point {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dim
            .cmp(&other.dim)
            .then_with(|| {
                for i in 0..self.dim as usize {
                    let c = self.xs[i].total_cmp(&other.xs[i]);
                    if c != Ordering::Equal {
                        return c;
                    }
                }
                Ordering::Equal
            })
    }
}

impl std::hash::Hash for Point {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.dim.hash(state);
        for c in self.coords() {
            c.to_bits().hash(state);
        }
    }
}

impl std::fmt::Debug for Point {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.coords().iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

impl Serialize for Point {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.coords().serialize(s)
    }
}
impl<'de> Deserialize<'de> for Point {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<f64>::deserialize(d)?;
        Point::new(&v).map_err(serde::de::Error::custom)
    }
}

/// A finite Euclidean simplicial complex: vertices plus per-dimension lists
/// of sorted vertex-index tuples.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EuclideanComplex {
    pub n: usize,
    pub vertices: Vec<Point>,
    /// `simplices[d]` is the list of d-simplices (each a sorted index tuple).
    pub simplices: Vec<Vec<Vec<u32>>>,
}

impl EuclideanComplex {
    pub fn dim(&self) -> usize {
        self.simplices.iter().rposition(|s| !s.is_empty()).unwrap_or(0)
    }

    pub fn simplex_points(&self, d: usize, i: usize) -> Vec<Point> {
        self.simplices[d][i].iter().map(|&v| self.vertices[v as usize]).collect()
    }

    /// Maximum diameter over all top-dimensional simplices.
    pub fn width(&self) -> f64 {
        let d = self.dim();
        let mut w: f64 = 0.0;
        for s in &self.simplices[d] {
            for i in 0..s.len() {
                for j in (i + 1)..s.len() {
                    w = w.max(self.vertices[s[i] as usize].dist(&self.vertices[s[j] as usize]));
                }
            }
        }
        w
    }

    /// Check that every face of every simplex is present (closure property).
    pub fn is_closed_under_faces(&self) -> bool {
        use std::collections::HashSet;
        let present: Vec<HashSet<&[u32]>> = self
            .simplices
            .iter()
            .map(|level| level.iter().map(|s| s.as_slice()).collect())
            .collect();
        for d in 1..self.simplices.len() {
            for s in &self.simplices[d] {
                for omit in 0..s.len() {
                    let face: Vec<u32> =
                        s.iter().enumerate().filter(|(k, _)| *k != omit).map(|(_, &v)| v).collect();
                    if !present[d - 1].contains(face.as_slice()) {
                        return false;
                    }
                }
            }
        }
        true
    }
}

/// Kuhn (standard simplicial) subdivision of an m-fold grid on `[0,1]^n`.
///
/// Each grid cube of side `1/m` is split into `n!` simplices, one per
/// coordinate order; width is `sqrt(n)/m`.
pub fn build_cube_domain(n: usize, m: usize) -> Result<EuclideanComplex> {
    if !(3..=MAX_DIM).contains(&n) {
        return Err(Error::UnsupportedDimension(n, "3..=6"));
    }
    if m < 1 {
        return Err(Error::InvalidInput("m must be >= 1".into()));
    }
    build_kuhn_grid(n, m, &vec![(0.0, 1.0); n])
}

/// Kuhn grid over an axis-aligned box, exposed for facet triangulations.
pub fn build_kuhn_grid(n: usize, m: usize, ranges: &[(f64, f64)]) -> Result<EuclideanComplex> {
    let strides: Vec<usize> = (0..n).map(|i| (m + 1).pow(i as u32)).collect();
    let nv = (m + 1).pow(n as u32);
    let mut vertices = Vec::with_capacity(nv);
    for idx in 0..nv {
        let mut c = vec![0.0; n];
        let mut r = idx;
        for i in 0..n {
            let k = r % (m + 1);
            r /= m + 1;
            let (lo, hi) = ranges[i];
            c[i] = lo + (hi - lo) * (k as f64) / (m as f64);
        }
        vertices.push(Point::new(&c)?);
    }
    let mut perms = Vec::new();
    permutations(n, &mut (0..n).collect::<Vec<_>>(), 0, &mut perms);
    let mut tops = Vec::new();
    let mut base = vec![0usize; n];
    loop {
        let base_idx: usize = (0..n).map(|i| base[i] * strides[i]).sum();
        for perm in &perms {
            let mut s = Vec::with_capacity(n + 1);
            let mut v = base_idx;
            s.push(v as u32);
            for &ax in perm {
                v += strides[ax];
                s.push(v as u32);
            }
            s.sort_unstable();
            tops.push(s);
        }
        // advance base over the m^n grid cells
        let mut i = 0;
        loop {
            if i == n {
                break;
            }
            base[i] += 1;
            if base[i] < m {
                break;
            }
            base[i] = 0;
            i += 1;
        }
        if i == n {
            break;
        }
    }
    let mut simplices = vec![Vec::new(); n + 1];
    simplices[0] = (0..nv as u32).map(|i| vec![i]).collect();
    simplices[n] = tops;
    // intermediate faces filled on demand by `close_faces`
    Ok(EuclideanComplex { n, vertices, simplices })
}

pub(crate) fn permutations(n: usize, scratch: &mut Vec<usize>, k: usize, out: &mut Vec<Vec<usize>>) {
    if k == n {
        out.push(scratch.clone());
        return;
    }
    for i in k..n {
        scratch.swap(k, i);
        permutations(n, scratch, k + 1, out);
        scratch.swap(k, i);
    }
}

/// Fill in all intermediate faces of the top simplices (closure).
pub fn close_faces(c: &mut EuclideanComplex) {
    use std::collections::BTreeSet;
    let top = c.dim();
    for d in (1..=top).rev() {
        let mut faces: BTreeSet<Vec<u32>> = c.simplices[d - 1].iter().cloned().collect();
        let level = c.simplices[d].clone();
        for s in &level {
            for omit in 0..s.len() {
                let f: Vec<u32> =
                    s.iter().enumerate().filter(|(k, _)| *k != omit).map(|(_, &v)| v).collect();
                faces.insert(f);
            }
        }
        c.simplices[d - 1] = faces.into_iter().collect();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_cell_cube_has_8_vertices_and_width_sqrt3() {
        let c = build_cube_domain(3, 1).unwrap();
        assert_eq!(c.vertices.len(), 8);
        assert!((c.width() - 3f64.sqrt()).abs() < 1e-12);
        assert_eq!(c.simplices[3].len(), 6);
    }

    #[test]
    fn width_of_m4_grid_matches_enumeration() {
        // width sqrt(3)/4 = 0.4330..., computed: max simplex diameter by enumeration
        let c = build_cube_domain(3, 4).unwrap();
        let mut w: f64 = 0.0;
        for s in &c.simplices[3] {
            for i in 0..s.len() {
                for j in (i + 1)..s.len() {
                    w = w.max(c.vertices[s[i] as usize].dist(&c.vertices[s[j] as usize]));
                }
            }
        }
        assert!((w - 3f64.sqrt() / 4.0).abs() < 1e-12);
        assert!((c.width() - w).abs() == 0.0);
    }

    #[test]
    fn rejects_unsupported_dimension() {
        assert!(build_cube_domain(2, 1).is_err());
        assert!(build_cube_domain(7, 1).is_err());
    }

    #[test]
    fn closure_fills_faces() {
        let mut c = build_cube_domain(3, 1).unwrap();
        close_faces(&mut c);
        assert!(c.is_closed_under_faces());
        // a 3-cube Kuhn triangulation has 18 triangles and 19 edges
        assert_eq!(c.simplices[2].len(), 18);
        assert_eq!(c.simplices[1].len(), 19);
    }

    #[test]
    fn point_ordering_is_total_and_bitwise() {
        let a = Point::from_slice(&[0.0, 1.0, 2.0]);
        let b = Point::from_slice(&[0.0, 1.0, 2.0]);
        let c = Point::from_slice(&[0.0, 1.5, 0.0]);
        assert_eq!(a, b);
        assert!(a < c);
    }
}
