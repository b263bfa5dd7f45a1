//! Dense symmetric-matrix kernels.
//!
//! Every estimator in this crate works with small dense symmetric matrices
//! (a few hundred rows at most), so everything here is a thin layer over
//! `nalgebra` plus the projections used by the proximal solver.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{PnnError, Result};

/// Iteration cap handed to the QR eigensolver, per unit of dimension.
const EIG_ITERS_PER_DIM: usize = 1000;

/// Symmetry tolerance accepted by [`SymMatrix::new`], relative to the
/// largest entry.
const SYMMETRY_TOL: f64 = 1e-9;

/// Dense `n x n` real symmetric matrix.
///
/// Symmetry is exact: `a[(i, j)] == a[(j, i)]` bitwise for every entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SymMatrixRepr", into = "SymMatrixRepr")]
pub struct SymMatrix(DMatrix<f64>);

#[derive(Serialize, Deserialize)]
struct SymMatrixRepr {
    n: usize,
    /// Row-major entries.
    entries: Vec<f64>,
}

impl TryFrom<SymMatrixRepr> for SymMatrix {
    type Error = PnnError;

    fn try_from(r: SymMatrixRepr) -> Result<Self> {
        SymMatrix::from_row_slice(r.n, &r.entries)
    }
}

impl From<SymMatrix> for SymMatrixRepr {
    fn from(m: SymMatrix) -> Self {
        let n = m.n();
        let entries = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .map(|(i, j)| m.0[(i, j)])
            .collect();
        SymMatrixRepr { n, entries }
    }
}

impl SymMatrix {
    /// Validates `m` (square, non-empty, finite, symmetric up to rounding)
    /// and stores its exact symmetric part.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(PnnError::dim(format!(
                "expected a square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.nrows() == 0 {
            return Err(PnnError::arg("matrix dimension must be at least 1"));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(PnnError::Numerical("matrix entries".into()));
        }
        let scale = m.amax().max(1.0);
        let n = m.nrows();
        for i in 0..n {
            for j in (i + 1)..n {
                if (m[(i, j)] - m[(j, i)]).abs() > SYMMETRY_TOL * scale {
                    return Err(PnnError::arg(format!(
                        "matrix is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(Self::symmetrized(m))
    }

    pub fn from_row_slice(n: usize, entries: &[f64]) -> Result<Self> {
        if entries.len() != n * n {
            return Err(PnnError::dim(format!(
                "{} entries for a {n}x{n} matrix",
                entries.len()
            )));
        }
        Self::new(DMatrix::from_row_slice(n, n, entries))
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn identity(n: usize) -> Self {
        SymMatrix(DMatrix::identity(n, n))
    }

    pub fn zeros(n: usize) -> Self {
        SymMatrix(DMatrix::zeros(n, n))
    }

    /// Exact symmetric part `(m + m^T) / 2`. Skips validation; callers
    /// guarantee `m` is square.
    pub(crate) fn symmetrized(m: DMatrix<f64>) -> Self {
        let n = m.nrows();
        let mut out = m;
        for i in 0..n {
            for j in (i + 1)..n {
                let v = 0.5 * (out[(i, j)] + out[(j, i)]);
                out[(i, j)] = v;
                out[(j, i)] = v;
            }
        }
        SymMatrix(out)
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn scaled(&self, s: f64) -> SymMatrix {
        SymMatrix(&self.0 * s)
    }

    pub fn add(&self, other: &SymMatrix) -> SymMatrix {
        SymMatrix(&self.0 + &other.0)
    }

    pub fn sub(&self, other: &SymMatrix) -> SymMatrix {
        SymMatrix(&self.0 - &other.0)
    }

    /// `self + s * I`.
    pub fn shifted(&self, s: f64) -> SymMatrix {
        let mut m = self.0.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += s;
        }
        SymMatrix(m)
    }

    pub fn trace_product(&self, other: &SymMatrix) -> f64 {
        self.0.component_mul(&other.0).sum()
    }

    /// Symmetric permutation `P A P^T` where row `i` of the result is row
    /// `perm[i]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> SymMatrix {
        let n = self.n();
        SymMatrix(DMatrix::from_fn(n, n, |i, j| self.0[(perm[i], perm[j])]))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// Eigendecomposition of a symmetric matrix.
#[derive(Clone, Debug)]
pub struct EigPair {
    /// Ascending.
    pub values: DVector<f64>,
    /// Orthonormal columns; column `i` pairs with `values[i]`.
    pub vectors: DMatrix<f64>,
}

impl EigPair {
    /// `V diag(f(w)) V^T`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> SymMatrix {
        let mut scaled = self.vectors.clone();
        for (mut col, &w) in scaled.column_iter_mut().zip(self.values.iter()) {
            col *= f(w);
        }
        SymMatrix::symmetrized(scaled * self.vectors.transpose())
    }

    pub fn reconstruct(&self) -> SymMatrix {
        self.map(|w| w)
    }

    pub fn min(&self) -> f64 {
        self.values[0]
    }

    pub fn max(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    /// Largest absolute eigenvalue.
    pub fn spectral_norm(&self) -> f64 {
        self.min().abs().max(self.max().abs())
    }
}

/// Eigendecomposition with ascending eigenvalues and a deterministic sign
/// convention: the largest-magnitude entry of each eigenvector is positive,
/// ties going to the lowest index.
pub fn sym_eig(a: &SymMatrix) -> Result<EigPair> {
    sym_eig_with_cap(a, EIG_ITERS_PER_DIM * a.n())
}

pub fn sym_eig_with_cap(a: &SymMatrix, max_iter: usize) -> Result<EigPair> {
    let n = a.n();
    let eig = SymmetricEigen::try_new(a.0.clone(), f64::EPSILON, max_iter.max(1))
        .ok_or(PnnError::NonConvergence { n, max_iter })?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));

    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let col = eig.eigenvectors.column(src);
        let peak = col.amax();
        let lead = col
            .iter()
            .position(|v| v.abs() >= peak - 1e-12 * peak.max(1.0))
            .unwrap_or(0);
        let sign = if col[lead] < 0.0 { -1.0 } else { 1.0 };
        vectors.set_column(dst, &(col * sign));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(PnnError::NonConvergence { n, max_iter });
    }
    Ok(EigPair { values, vectors })
}

/// Nearest positive semidefinite matrix in Frobenius norm.
///
/// Returns the input bit-for-bit when it has no negative eigenvalue, so
/// exact zeros survive an inactive projection.
pub fn psd_project(a: &SymMatrix) -> Result<SymMatrix> {
    let eig = sym_eig(a)?;
    Ok(psd_project_with(a, &eig))
}

/// [`psd_project`] given a precomputed decomposition of `a`.
pub(crate) fn psd_project_with(a: &SymMatrix, eig: &EigPair) -> SymMatrix {
    if eig.min() >= 0.0 {
        return a.clone();
    }
    // Subtract the negative part rather than rebuilding the whole matrix.
    let mut out = a.0.clone();
    for (i, &w) in eig.values.iter().enumerate() {
        if w >= 0.0 {
            break;
        }
        let v = eig.vectors.column(i);
        out -= (v * v.transpose()) * w;
    }
    SymMatrix::symmetrized(out)
}

/// Soft-thresholds the off-diagonal entries: `sign(a) * max(|a| - tau, 0)`.
pub fn soft_threshold_offdiag(a: &SymMatrix, tau: f64) -> Result<SymMatrix> {
    if !(tau >= 0.0) {
        return Err(PnnError::arg(format!("threshold must be nonnegative, got {tau}")));
    }
    let n = a.n();
    let mut out = a.0.clone();
    for i in 0..n {
        for j in 0..n {
            if i != j {
                out[(i, j)] = soft(out[(i, j)], tau);
            }
        }
    }
    Ok(SymMatrix(out))
}

#[inline]
pub(crate) fn soft(x: f64, tau: f64) -> f64 {
    let mag = x.abs() - tau;
    if mag > 0.0 {
        mag.copysign(x)
    } else {
        0.0
    }
}

/// Rescales `a` by `bound / max(bound, ||a||_2)`.
pub fn spectral_norm_clip(a: &SymMatrix, bound: f64) -> Result<SymMatrix> {
    if !(bound > 0.0) {
        return Err(PnnError::arg(format!("spectral bound must be positive, got {bound}")));
    }
    let norm = sym_eig(a)?.spectral_norm();
    Ok(clip_by(a, norm, bound))
}

pub(crate) fn clip_by(a: &SymMatrix, norm: f64, bound: f64) -> SymMatrix {
    if norm > bound {
        a.scaled(bound / norm)
    } else {
        a.clone()
    }
}

/// `log det(A + eps I)` from the eigenvalues of `A`.
pub fn logdet_reg(a: &SymMatrix, eps: f64) -> Result<f64> {
    let eig = sym_eig(a)?;
    logdet_from_eig(&eig, eps)
}

pub(crate) fn logdet_from_eig(eig: &EigPair, eps: f64) -> Result<f64> {
    let mut acc = 0.0;
    for (index, &w) in eig.values.iter().enumerate() {
        let value = w + eps;
        if !(value > 0.0) {
            return Err(PnnError::Domain { index, value });
        }
        acc += value.ln();
    }
    Ok(acc)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MatrixNorms {
    pub frobenius: f64,
    pub l1_offdiag: f64,
    pub nuclear: f64,
    pub spectral: f64,
}

pub fn matrix_norms(a: &SymMatrix) -> Result<MatrixNorms> {
    let eig = sym_eig(a)?;
    Ok(MatrixNorms {
        frobenius: a.0.norm(),
        l1_offdiag: l1_offdiag(a),
        nuclear: eig.values.iter().map(|w| w.abs()).sum(),
        spectral: eig.spectral_norm(),
    })
}

pub fn l1_offdiag(a: &SymMatrix) -> f64 {
    let n = a.n();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                acc += a.0[(i, j)].abs();
            }
        }
    }
    acc
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub fn random_sym(n: usize, seed: u64) -> SymMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        SymMatrix::symmetrized(&m + m.transpose())
    }

    pub fn random_pd(n: usize, seed: u64) -> SymMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        SymMatrix::symmetrized(&m * m.transpose()).shifted(0.5)
    }

    /// Cofactor-expansion determinant, for tiny matrices only.
    pub fn cofactor_det(m: &DMatrix<f64>) -> f64 {
        let n = m.nrows();
        if n == 1 {
            return m[(0, 0)];
        }
        (0..n)
            .map(|j| {
                let minor = m.clone().remove_row(0).remove_column(j);
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                sign * m[(0, j)] * cofactor_det(&minor)
            })
            .sum()
    }
}
