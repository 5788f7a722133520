use serde::{Deserialize, Serialize};

use super::cholesky::Cholesky;
use super::dense::Mat;
use super::eigen::{self, SpectralDecomposition};
use crate::error::{Error, Result};

/// Floor used by [`SymMat::numerical_rank`] so the zero matrix has rank 0.
pub const RANK_EPS_FLOOR: f64 = 1e-14;

/// Real symmetric `n x n` matrix in packed upper-triangle storage.
///
/// Each off-diagonal entry is stored once, so symmetry is exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymMat {
    n: usize,
    data: Vec<f64>,
}

#[inline]
fn packed(i: usize, j: usize) -> usize {
    let (lo, hi) = if i <= j { (i, j) } else { (j, i) };
    hi * (hi + 1) / 2 + lo
}

impl SymMat {
    /// Panics on `n == 0`.
    pub fn zeros(n: usize) -> Self {
        assert!(n >= 1, "SymMat requires n >= 1");
        Self {
            n,
            data: vec![0.0; n * (n + 1) / 2],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diag(&vec![1.0; n])
    }

    pub fn from_diag(d: &[f64]) -> Self {
        let mut m = Self::zeros(d.len());
        for (i, v) in d.iter().enumerate() {
            m.set(i, i, *v);
        }
        m
    }

    /// Builds a matrix by evaluating `f(i, j)` on the upper triangle (`i <= j`).
    pub fn from_upper_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(n);
        for j in 0..n {
            for i in 0..=j {
                m.data[packed(i, j)] = f(i, j);
            }
        }
        m
    }

    /// Reads the upper triangle of a square dense matrix, ignoring the lower one.
    pub fn from_upper(m: &Mat) -> Result<Self> {
        if m.rows() != m.cols() {
            return Err(Error::DimensionMismatch {
                expected: m.rows(),
                actual: m.cols(),
            });
        }
        Ok(Self::from_upper_fn(m.rows(), |i, j| m[(i, j)]))
    }

    /// Symmetrizes `(M + M^T)/2` when the largest asymmetry is at most
    /// `rel_tol * max(1, max|M_ij|)`; errors otherwise.
    pub fn from_dense_checked(m: &Mat, rel_tol: f64) -> Result<Self> {
        if m.rows() != m.cols() {
            return Err(Error::DimensionMismatch {
                expected: m.rows(),
                actual: m.cols(),
            });
        }
        let n = m.rows();
        let tolerance = rel_tol * m.max_abs().max(1.0);
        let mut asymmetry: f64 = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                asymmetry = asymmetry.max((m[(i, j)] - m[(j, i)]).abs());
            }
        }
        if asymmetry > tolerance {
            return Err(Error::Asymmetry {
                asymmetry,
                tolerance,
            });
        }
        Ok(Self::from_upper_fn(n, |i, j| {
            if i == j {
                m[(i, i)]
            } else {
                0.5 * (m[(i, j)] + m[(j, i)])
            }
        }))
    }

    /// `V diag(w) V^T` for a column set `V` (n x k) and weights `w` (len k).
    pub fn from_congruence(v: &Mat, w: &[f64]) -> Self {
        assert_eq!(v.cols(), w.len());
        let n = v.rows();
        let mut m = Self::zeros(n);
        for j in 0..n {
            let vj = v.row(j);
            for i in 0..=j {
                let vi = v.row(i);
                let mut s = 0.0;
                for k in 0..w.len() {
                    s += vi[k] * w[k] * vj[k];
                }
                m.data[packed(i, j)] = s;
            }
        }
        m
    }

    /// `U Q U^T` for `U` (n x r) and symmetric `Q` (r x r).
    pub fn congruence(u: &Mat, q: &SymMat) -> Self {
        assert_eq!(u.cols(), q.n());
        let uq = u.matmul(&q.to_dense());
        let n = u.rows();
        Self::from_upper_fn(n, |i, j| {
            uq.row(i).iter().zip(u.row(j)).map(|(a, b)| a * b).sum()
        })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[packed(i, j)]
    }

    /// Sets both `(i, j)` and `(j, i)`.
    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[packed(i, j)] = v;
    }

    /// Packed upper-triangle entries (column by column).
    pub fn packed_entries(&self) -> &[f64] {
        &self.data
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    pub fn to_dense(&self) -> Mat {
        Mat::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.get(i, j)).collect())
            .collect()
    }

    fn check_dim(&self, other: &SymMat) -> Result<()> {
        if self.n != other.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                actual: other.n,
            });
        }
        Ok(())
    }

    fn zip_with(&self, other: &SymMat, f: impl Fn(f64, f64) -> f64) -> SymMat {
        assert_eq!(self.n, other.n, "dimension mismatch");
        SymMat {
            n: self.n,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| f(*a, *b))
                .collect(),
        }
    }

    /// Panics on dimension mismatch.
    pub fn add(&self, other: &SymMat) -> SymMat {
        self.zip_with(other, |a, b| a + b)
    }

    /// Panics on dimension mismatch.
    pub fn sub(&self, other: &SymMat) -> SymMat {
        self.zip_with(other, |a, b| a - b)
    }

    /// `self + s * other`.
    pub fn axpy(&self, s: f64, other: &SymMat) -> SymMat {
        self.zip_with(other, |a, b| a + s * b)
    }

    pub fn scale(&self, s: f64) -> SymMat {
        SymMat {
            n: self.n,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn add_diag(&self, d: &[f64]) -> SymMat {
        assert_eq!(d.len(), self.n);
        let mut m = self.clone();
        for (i, v) in d.iter().enumerate() {
            m.data[packed(i, i)] += v;
        }
        m
    }

    pub fn add_identity(&self, s: f64) -> SymMat {
        self.add_diag(&vec![s; self.n])
    }

    /// Orthogonal projection onto matrices with zero diagonal.
    pub fn chi(&self) -> SymMat {
        let mut m = self.clone();
        for i in 0..self.n {
            m.data[packed(i, i)] = 0.0;
        }
        m
    }

    /// Diagonal part, `M - chi(M)`.
    pub fn diag_part(&self) -> SymMat {
        SymMat::from_diag(&self.diag())
    }

    /// `tr(AB)`.
    pub fn inner(&self, other: &SymMat) -> Result<f64> {
        self.check_dim(other)?;
        let mut diag = 0.0;
        let mut off = 0.0;
        for j in 0..self.n {
            let base = j * (j + 1) / 2;
            for i in 0..j {
                off += self.data[base + i] * other.data[base + i];
            }
            diag += self.data[base + j] * other.data[base + j];
        }
        Ok(diag + 2.0 * off)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.inner(self).expect("same dimension").sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_off_diag(&self) -> f64 {
        self.chi().max_abs()
    }

    pub fn is_diagonal(&self, tol: f64) -> bool {
        self.max_abs_off_diag() <= tol
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.get(i, j) * x[j]).sum())
            .collect()
    }

    /// Dense product `AB` (not symmetric in general).
    pub fn matmul(&self, other: &SymMat) -> Mat {
        self.to_dense().matmul(&other.to_dense())
    }

    pub fn cholesky(&self) -> Result<Cholesky> {
        Cholesky::new(self)
    }

    /// `log|M|` via Cholesky.
    pub fn logdet_pd(&self) -> Result<f64> {
        Ok(self.cholesky()?.logdet())
    }

    pub fn inv_pd(&self) -> Result<SymMat> {
        Ok(self.cholesky()?.inverse())
    }

    pub fn eig(&self) -> Result<SpectralDecomposition> {
        eigen::eig_sym(self)
    }

    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        Ok(self.eig()?.values)
    }

    pub fn spectral_norm(&self) -> Result<f64> {
        Ok(self
            .eigenvalues()?
            .iter()
            .fold(0.0_f64, |m, w| m.max(w.abs())))
    }

    /// Number of eigenvalues with `|w| > rel_tol * max(|w_max|, 1e-14)`.
    pub fn numerical_rank(&self, rel_tol: f64) -> Result<usize> {
        if rel_tol.is_nan() || rel_tol <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "rank tolerance must be positive, got {rel_tol}"
            )));
        }
        Ok(rank_of_spectrum(&self.eigenvalues()?, rel_tol))
    }

    /// Top-`k` singular values (absolute eigenvalues), nonincreasing.
    pub fn singular_values(&self, k: usize) -> Result<Vec<f64>> {
        if k > self.n {
            return Err(Error::InvalidParameter(format!(
                "requested {k} singular values of a {n}x{n} matrix",
                n = self.n
            )));
        }
        let mut s: Vec<f64> = self.eigenvalues()?.iter().map(|w| w.abs()).collect();
        s.sort_by(|a, b| b.total_cmp(a));
        s.truncate(k);
        Ok(s)
    }
}

/// Rank count shared by [`SymMat::numerical_rank`] and spectrum reports.
pub fn rank_of_spectrum(values: &[f64], rel_tol: f64) -> usize {
    let top = values.iter().fold(0.0_f64, |m, w| m.max(w.abs()));
    let cut = rel_tol * top.max(RANK_EPS_FLOOR);
    values.iter().filter(|w| w.abs() > cut).count()
}
