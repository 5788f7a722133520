use super::dense::Mat;
use super::symmat::SymMat;
use crate::error::{Error, Result};

/// Lower-triangular factor `L` with `M = L L^T`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: Mat,
}

impl Cholesky {
    pub fn new(m: &SymMat) -> Result<Self> {
        let n = m.n();
        let mut l = Mat::zeros(n, n);
        for j in 0..n {
            let mut d = m.get(j, j);
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite { pivot: j, value: d });
            }
            let djj = d.sqrt();
            l[(j, j)] = djj;
            for i in (j + 1)..n {
                let mut s = m.get(i, j);
                let (li, lj) = (l.row(i), l.row(j));
                for k in 0..j {
                    s -= li[k] * lj[k];
                }
                l[(i, j)] = s / djj;
            }
        }
        Ok(Self { l })
    }

    pub fn factor(&self) -> &Mat {
        &self.l
    }

    pub fn logdet(&self) -> f64 {
        (0..self.l.rows()).map(|i| 2.0 * self.l[(i, i)].ln()).sum()
    }

    /// Solves `M x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.l.rows();
        assert_eq!(b.len(), n);
        let mut y = b.to_vec();
        for i in 0..n {
            let row = self.l.row(i);
            let mut s = y[i];
            for k in 0..i {
                s -= row[k] * y[k];
            }
            y[i] = s / row[i];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= self.l[(k, i)] * y[k];
            }
            y[i] = s / self.l[(i, i)];
        }
        y
    }

    /// Inverse lower factor `L^{-1}`.
    fn inverse_factor(&self) -> Mat {
        let n = self.l.rows();
        let mut inv = Mat::zeros(n, n);
        for j in 0..n {
            inv[(j, j)] = 1.0 / self.l[(j, j)];
            for i in (j + 1)..n {
                let row = self.l.row(i);
                let mut s = 0.0;
                for k in j..i {
                    s -= row[k] * inv[(k, j)];
                }
                inv[(i, j)] = s / row[i];
            }
        }
        inv
    }

    /// `M^{-1} = L^{-T} L^{-1}`, exactly symmetric.
    pub fn inverse(&self) -> SymMat {
        let n = self.l.rows();
        let li = self.inverse_factor();
        SymMat::from_upper_fn(n, |i, j| {
            // rows k >= j of L^{-1} are the only nonzero ones in both columns
            (j..n).map(|k| li[(k, i)] * li[(k, j)]).sum()
        })
    }
}
