//! Minimum-norm least squares through a one-sided Jacobi SVD.

use super::dense::Mat;

const MAX_SWEEPS: usize = 80;

#[derive(Debug, Clone)]
pub struct LstsqSolution {
    pub x: Vec<f64>,
    /// Singular values of the system matrix, nonincreasing.
    pub singular_values: Vec<f64>,
    /// Number of singular values kept (above `rel_cut * s_max`).
    pub rank: usize,
    /// `||A x - b||_2`.
    pub residual_norm: f64,
}

impl LstsqSolution {
    pub fn rank_deficient(&self) -> bool {
        self.rank < self.singular_values.len()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn rotate(a: &mut [f64], b: &mut [f64], c: f64, s: f64) {
    for (x, y) in a.iter_mut().zip(b.iter_mut()) {
        let (u, v) = (*x, *y);
        *x = c * u - s * v;
        *y = s * u + c * v;
    }
}

/// Solves `min ||A x - b||` with the minimum-norm convention: singular
/// values below `rel_cut * s_max` are treated as zero.
pub fn lstsq_min_norm(a: &Mat, b: &[f64], rel_cut: f64) -> LstsqSolution {
    let (m, p) = (a.rows(), a.cols());
    assert_eq!(b.len(), m, "right-hand side length");
    // columns of A and of V stored as rows
    let mut cols = a.transpose();
    let mut vt = Mat::identity(p);
    let eps = f64::EPSILON;

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for i in 0..p {
            for j in (i + 1)..p {
                let alpha = dot(cols.row(i), cols.row(i));
                let beta = dot(cols.row(j), cols.row(j));
                let gamma = dot(cols.row(i), cols.row(j));
                if gamma == 0.0 || gamma.abs() <= eps * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (ci, cj) = cols.row_pair_mut(i, j);
                rotate(ci, cj, c, s);
                let (vi, vj) = vt.row_pair_mut(i, j);
                rotate(vi, vj, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let norms: Vec<f64> = (0..p).map(|k| dot(cols.row(k), cols.row(k)).sqrt()).collect();
    let s_max = norms.iter().fold(0.0_f64, |acc, s| acc.max(*s));
    let cut = rel_cut * s_max;
    let mut x = vec![0.0; p];
    let mut rank = 0;
    for k in 0..p {
        let s = norms[k];
        if s <= cut || s == 0.0 {
            continue;
        }
        rank += 1;
        let coef = dot(cols.row(k), b) / (s * s);
        for (xi, vi) in x.iter_mut().zip(vt.row(k)) {
            *xi += coef * vi;
        }
    }
    let ax = a.matvec(&x);
    let residual_norm = ax
        .iter()
        .zip(b)
        .map(|(u, v)| (u - v) * (u - v))
        .sum::<f64>()
        .sqrt();
    let mut singular_values = norms;
    singular_values.sort_by(|a, b| b.total_cmp(a));
    LstsqSolution {
        x,
        singular_values,
        rank,
        residual_norm,
    }
}
