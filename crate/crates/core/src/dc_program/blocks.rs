//! Affine symmetric matrix blocks `Z(x) = Z0 + Σ_v x_v M_v`.
//!
//! Coefficient matrices are stored sparsely as upper-triangle entries; an
//! entry `(r, c, v)` with `r < c` stands for `v` at both `(r, c)` and `(c, r)`.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

pub type Entries = Vec<(usize, usize, f64)>;

#[derive(Debug, Clone, PartialEq)]
pub struct LmiBlock {
    pub name: String,
    pub dim: usize,
    pub constant: Entries,
    /// (variable index, coefficient entries), sorted by variable index.
    pub terms: Vec<(usize, Entries)>,
}

impl LmiBlock {
    pub fn evaluate(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut z = DMatrix::zeros(self.dim, self.dim);
        scatter(&mut z, &self.constant, 1.0);
        for (var, entries) in &self.terms {
            let xv = x[*var];
            if xv != 0.0 {
                scatter(&mut z, entries, xv);
            }
        }
        z
    }

    pub fn coefficient(&self, entries: &Entries) -> DMatrix<f64> {
        let mut z = DMatrix::zeros(self.dim, self.dim);
        scatter(&mut z, entries, 1.0);
        z
    }
}

pub fn scatter(z: &mut DMatrix<f64>, entries: &Entries, scale: f64) {
    for &(r, c, v) in entries {
        z[(r, c)] += scale * v;
        if r != c {
            z[(c, r)] += scale * v;
        }
    }
}

#[derive(Debug)]
pub(crate) struct BlockBuilder {
    name: String,
    dim: usize,
    constant: BTreeMap<(usize, usize), f64>,
    terms: BTreeMap<usize, BTreeMap<(usize, usize), f64>>,
}

impl BlockBuilder {
    pub fn new(name: impl Into<String>, dim: usize) -> Self {
        Self { name: name.into(), dim, constant: BTreeMap::new(), terms: BTreeMap::new() }
    }

    /// Adds `v` to the symmetric pair at (r, c).
    pub fn constant(&mut self, r: usize, c: usize, v: f64) {
        if v != 0.0 {
            *self.constant.entry(key(r, c)).or_insert(0.0) += v;
        }
    }

    pub fn var(&mut self, var: usize, r: usize, c: usize, v: f64) {
        if v != 0.0 {
            *self.terms.entry(var).or_default().entry(key(r, c)).or_insert(0.0) += v;
        }
    }

    pub fn constant_matrix(&mut self, r0: usize, c0: usize, m: &DMatrix<f64>) {
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                if r0 == c0 && j < i {
                    continue;
                }
                self.constant(r0 + i, c0 + j, m[(i, j)]);
            }
        }
    }

    pub fn build(self) -> LmiBlock {
        let strip = |m: BTreeMap<(usize, usize), f64>| -> Entries {
            m.into_iter().filter(|(_, v)| *v != 0.0).map(|((r, c), v)| (r, c, v)).collect()
        };
        LmiBlock {
            name: self.name,
            dim: self.dim,
            constant: strip(self.constant),
            terms: self.terms.into_iter().map(|(v, m)| (v, strip(m))).filter(|(_, e)| !e.is_empty()).collect(),
        }
    }
}

fn key(r: usize, c: usize) -> (usize, usize) {
    (r.min(c), r.max(c))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builder_accumulates_symmetric_entries() {
        let mut b = BlockBuilder::new("t", 2);
        b.constant(0, 0, 1.0);
        b.var(0, 1, 0, 2.0);
        b.var(0, 0, 1, 1.0);
        b.var(1, 1, 1, -1.0);
        let blk = b.build();
        let z = blk.evaluate(&DVector::from_vec(vec![1.0, 3.0]));
        assert_eq!(z, DMatrix::from_row_slice(2, 2, &[1.0, 3.0, 3.0, -3.0]));
    }
}
