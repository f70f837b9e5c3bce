//! Cubical parameter complexes: subcomplexes of `I^d(q)`, the d-cube divided
//! into q equal parts along each axis.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

/// A cell of `I^d(q)`: per-axis base index plus an extent flag. Axis `i`
/// spans `[base[i], base[i]+1]/q` when `extent[i]` and is pinned to
/// `base[i]/q` otherwise.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub base: Vec<u32>,
    pub extent: Vec<bool>,
}

impl Cell {
    pub fn dim(&self) -> usize {
        self.extent.iter().filter(|&&e| e).count()
    }

    pub fn vertices(&self, _q: u32) -> Vec<Vec<u32>> {
        let free: Vec<usize> =
            (0..self.extent.len()).filter(|&i| self.extent[i]).collect();
        let k = free.len();
        let mut out = Vec::with_capacity(1 << k);
        for mask in 0..(1u32 << k) {
            let mut v = self.base.clone();
            for (bit, &ax) in free.iter().enumerate() {
                if mask & (1 << bit) != 0 {
                    v[ax] += 1;
                }
            }
            out.push(v);
        }
        out
    }

    pub fn faces(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for i in 0..self.extent.len() {
            if self.extent[i] {
                for side in 0..2u32 {
                    let mut f = self.clone();
                    f.extent[i] = false;
                    f.base[i] += side;
                    out.push(f);
                }
            }
        }
        out
    }

    /// Does `self` contain `other` as a (possibly improper) face?
    pub fn contains(&self, other: &Cell) -> bool {
        for i in 0..self.extent.len() {
            if self.extent[i] {
                if other.extent[i] {
                    if other.base[i] != self.base[i] {
                        return false;
                    }
                } else if other.base[i] < self.base[i] || other.base[i] > self.base[i] + 1 {
                    return false;
                }
            } else if other.extent[i] || other.base[i] != self.base[i] {
                return false;
            }
        }
        true
    }

    /// Vertex grid coordinates as points of `[0,1]^d`.
    pub fn vertex_coords(&self, q: u32) -> Vec<Vec<f64>> {
        self.vertices(q)
            .into_iter()
            .map(|v| v.iter().map(|&k| k as f64 / q as f64).collect())
            .collect()
    }

    pub fn center(&self, q: u32) -> Vec<f64> {
        (0..self.base.len())
            .map(|i| {
                let b = self.base[i] as f64;
                (if self.extent[i] { b + 0.5 } else { b }) / q as f64
            })
            .collect()
    }
}

/// A cubical complex: subcomplex of `I^d(q)`, closed under faces.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CubicalComplex {
    pub d: usize,
    pub q: u32,
    pub cells: BTreeSet<Cell>,
}

impl CubicalComplex {
    /// The full complex `I^d(q)`.
    pub fn full(d: usize, q: u32) -> Self {
        let mut cells = BTreeSet::new();
        // enumerate all cells: per axis either an extent over [b,b+1] (b<q) or a pin (b<=q)
        fn rec(d: usize, q: u32, axis: usize, cur: &mut Cell, cells: &mut BTreeSet<Cell>) {
            if axis == d {
                cells.insert(cur.clone());
                return;
            }
            for b in 0..=q {
                cur.base[axis] = b;
                cur.extent[axis] = false;
                rec(d, q, axis + 1, cur, cells);
                if b < q {
                    cur.extent[axis] = true;
                    rec(d, q, axis + 1, cur, cells);
                    cur.extent[axis] = false;
                }
            }
        }
        let mut cur = Cell { base: vec![0; d], extent: vec![false; d] };
        rec(d, q, 0, &mut cur, &mut cells);
        CubicalComplex { d, q, cells }
    }

    pub fn from_cells(d: usize, q: u32, tops: &[Cell]) -> Result<Self> {
        let mut cells = BTreeSet::new();
        let mut stack: Vec<Cell> = tops.to_vec();
        while let Some(c) = stack.pop() {
            if c.base.len() != d || c.extent.len() != d {
                return Err(Error::InvalidInput("cell arity mismatch".into()));
            }
            if cells.insert(c.clone()) {
                stack.extend(c.faces());
            }
        }
        Ok(CubicalComplex { d, q, cells })
    }

    pub fn dim(&self) -> usize {
        self.cells.iter().map(|c| c.dim()).max().unwrap_or(0)
    }

    /// The j-skeleton as a subcomplex.
    pub fn skeleton(&self, j: usize) -> Result<CubicalComplex> {
        if j > self.dim() {
            return Err(Error::InvalidInput(format!(
                "skeleton index {j} exceeds dim {}",
                self.dim()
            )));
        }
        Ok(CubicalComplex {
            d: self.d,
            q: self.q,
            cells: self.cells.iter().filter(|c| c.dim() <= j).cloned().collect(),
        })
    }

    pub fn cells_of_dim(&self, j: usize) -> Vec<&Cell> {
        self.cells.iter().filter(|c| c.dim() == j).collect()
    }

    /// Vertices (0-cells) of the complex.
    pub fn vertex_set(&self) -> Vec<&Cell> {
        self.cells_of_dim(0)
    }

    pub fn is_closed(&self) -> bool {
        self.cells.iter().all(|c| c.faces().iter().all(|f| self.cells.contains(f)))
    }

    /// `n(X)`: the maximum number of top-dimensional cells containing a vertex.
    pub fn max_top_cells_at_vertex(&self) -> usize {
        let p = self.dim();
        let tops: Vec<&Cell> = self.cells_of_dim(p);
        self.vertex_set()
            .iter()
            .map(|v| tops.iter().filter(|t| t.contains(v)).count())
            .max()
            .unwrap_or(0)
    }
}

/// Order the vertices of a cell by a per-vertex key, descending, with ties
/// broken by lexicographic vertex coordinates.
pub fn cell_vertices_sorted<F>(cell: &Cell, q: u32, key: F) -> Vec<Vec<u32>>
where
    F: Fn(&[u32]) -> f64,
{
    let mut vs = cell.vertices(q);
    vs.sort_by(|a, b| {
        key(b).total_cmp(&key(a)).then_with(|| a.cmp(b))
    });
    vs
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_square_skeleton_counts() {
        let x = CubicalComplex::full(2, 1);
        assert_eq!(x.cells_of_dim(0).len(), 4);
        assert_eq!(x.cells_of_dim(1).len(), 4);
        assert_eq!(x.cells_of_dim(2).len(), 1);
        assert_eq!(x.skeleton(0).unwrap().cells.len(), 4);
        assert!(x.is_closed());
    }

    #[test]
    fn refined_interval_has_two_edges() {
        let x = CubicalComplex::full(1, 2);
        assert_eq!(x.cells_of_dim(1).len(), 2);
        assert_eq!(x.cells_of_dim(0).len(), 3);
    }

    #[test]
    fn constant_key_sorts_lexicographically() {
        let x = CubicalComplex::full(2, 1);
        let top = x.cells_of_dim(2)[0].clone();
        let vs = cell_vertices_sorted(&top, 1, |_| 0.0);
        assert_eq!(vs, vec![vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]]);
    }

    #[test]
    fn n_of_x_bounded_by_2_pow_d() {
        let x = CubicalComplex::full(2, 2);
        assert!(x.max_top_cells_at_vertex() <= 4);
        assert_eq!(x.max_top_cells_at_vertex(), 4);
    }
}
