//! Sparse symmetric matrices and weighted self-adjoint operators.

use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;

use crate::error::{Error, Result};

/// Symmetric matrix in compressed sparse row form, both triangles stored.
#[derive(Debug, Clone, PartialEq)]
pub struct SymCsr {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SymCsr {
    /// Builds the matrix from `(i, j, v)` entries with `i <= j`; each
    /// off-diagonal entry is mirrored. Duplicates are summed.
    pub fn from_upper_triplets(n: usize, entries: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; n];
        for &(i, j, _) in entries {
            debug_assert!(i <= j && j < n);
            counts[i] += 1;
            if i != j {
                counts[j] += 1;
            }
        }
        let mut row_ptr = vec![0usize; n + 1];
        for i in 0..n {
            row_ptr[i + 1] = row_ptr[i] + counts[i];
        }
        let nnz = row_ptr[n];
        let mut col_idx = vec![0usize; nnz];
        let mut values = vec![0.0; nnz];
        let mut fill = row_ptr.clone();
        for &(i, j, v) in entries {
            col_idx[fill[i]] = j;
            values[fill[i]] = v;
            fill[i] += 1;
            if i != j {
                col_idx[fill[j]] = i;
                values[fill[j]] = v;
                fill[j] += 1;
            }
        }
        let mut m = SymCsr { n, row_ptr, col_idx, values };
        m.sort_and_merge();
        m
    }

    fn sort_and_merge(&mut self) {
        let mut row_ptr = vec![0usize; self.n + 1];
        let mut cols = Vec::with_capacity(self.col_idx.len());
        let mut vals = Vec::with_capacity(self.values.len());
        let mut scratch: Vec<(usize, f64)> = Vec::new();
        for i in 0..self.n {
            scratch.clear();
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                scratch.push((self.col_idx[k], self.values[k]));
            }
            scratch.sort_by_key(|e| e.0);
            for &(c, v) in &scratch {
                if cols.len() > row_ptr[i] && *cols.last().unwrap() == c {
                    *vals.last_mut().unwrap() += v;
                } else {
                    cols.push(c);
                    vals.push(v);
                }
            }
            row_ptr[i + 1] = cols.len();
        }
        self.row_ptr = row_ptr;
        self.col_idx = cols;
        self.values = vals;
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Entries of row `i` as `(column, value)` pairs, columns increasing.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i).find(|&(c, _)| c == i).map_or(0.0, |(_, v)| v))
            .collect()
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.values[k] * x[self.col_idx[k]];
            }
            *yi = s;
        }
    }

    /// Returns `D A D` for the diagonal matrix `D = diag(d)`.
    pub fn congruence(&self, d: &[f64]) -> SymCsr {
        let mut out = self.clone();
        for i in 0..self.n {
            for k in out.row_ptr[i]..out.row_ptr[i + 1] {
                out.values[k] *= d[i] * d[out.col_idx[k]];
            }
        }
        out
    }

    pub fn to_dense(&self) -> Mat<f64> {
        let mut m = Mat::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                m[(i, j)] += v;
            }
        }
        m
    }

    /// Lower triangle of `self + shift * I` in faer's column-major format.
    pub(crate) fn shifted_lower(&self, shift: f64) -> Result<SparseColMat<usize, f64>> {
        self.scaled_plus_diagonal_lower(1.0, |_| shift)
    }

    /// Lower triangle of `scale * self + diag(d)`.
    pub(crate) fn scaled_plus_diagonal_lower(&self, scale: f64, d: impl Fn(usize) -> f64) -> Result<SparseColMat<usize, f64>> {
        let mut trips = Vec::with_capacity(self.nnz() / 2 + self.n);
        for i in 0..self.n {
            let mut has_diag = false;
            for (j, v) in self.row(i) {
                if j == i {
                    has_diag = true;
                    trips.push(Triplet::new(i, i, scale * v + d(i)));
                } else if i > j {
                    trips.push(Triplet::new(i, j, scale * v));
                }
            }
            if !has_diag {
                trips.push(Triplet::new(i, i, d(i)));
            }
        }
        SparseColMat::try_new_from_triplets(self.n, self.n, &trips)
            .map_err(|e| Error::numerical(format!("sparse assembly failed: {e:?}")))
    }

    /// Writes the upper triangle as `i j value` lines.
    pub fn write_triplets<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                if j >= i {
                    writeln!(out, "{i} {j} {v}")?;
                }
            }
        }
        Ok(())
    }
}

/// Operator `u ↦ W⁻¹ K u` with `K` symmetric and `W = diag(weights)` positive.
///
/// It is self-adjoint with respect to `⟨a, b⟩_w = Σ wᵢ aᵢ bᵢ`; graph Laplacians
/// carry the uniform weights `1/n` of the empirical measure, grid operators the
/// quadrature weights `ρ(xᵢ) hᵈ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricOperator {
    stiffness: SymCsr,
    weights: Vec<f64>,
}

impl SymmetricOperator {
    pub fn new(stiffness: SymCsr, weights: Vec<f64>) -> Result<Self> {
        if stiffness.dim() != weights.len() {
            return Err(Error::validation("stiffness and weight dimensions differ"));
        }
        if weights.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
            return Err(Error::validation("inner-product weights must be positive and finite"));
        }
        Ok(SymmetricOperator { stiffness, weights })
    }

    /// Wraps a matrix that is symmetric in the uniform inner product `(1/n) Σ aᵢ bᵢ`.
    pub fn uniform(matrix: &SymCsr) -> Self {
        let n = matrix.dim();
        let w = 1.0 / n as f64;
        let mut stiffness = matrix.clone();
        stiffness.values.iter_mut().for_each(|v| *v *= w);
        SymmetricOperator { stiffness, weights: vec![w; n] }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn stiffness(&self) -> &SymCsr {
        &self.stiffness
    }

    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; u.len()];
        self.stiffness.matvec(u, &mut y);
        for (yi, wi) in y.iter_mut().zip(&self.weights) {
            *yi /= wi;
        }
        y
    }

    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        weighted_inner(&self.weights, a, b)
    }

    /// `⟨u, Op u⟩_w = uᵀ K u`.
    pub fn energy(&self, u: &[f64]) -> f64 {
        let mut y = vec![0.0; u.len()];
        self.stiffness.matvec(u, &mut y);
        u.iter().zip(&y).map(|(a, b)| a * b).sum()
    }

    /// The Euclidean-symmetric matrix `W^{-1/2} K W^{-1/2}`, similar to the operator.
    pub fn symmetrized(&self) -> SymCsr {
        let d: Vec<f64> = self.weights.iter().map(|w| 1.0 / w.sqrt()).collect();
        self.stiffness.congruence(&d)
    }
}

pub fn weighted_inner(w: &[f64], a: &[f64], b: &[f64]) -> f64 {
    w.iter().zip(a).zip(b).map(|((w, a), b)| w * a * b).sum()
}
