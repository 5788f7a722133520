//! Primal recovery from the dual optimum through the KKT conditions, and
//! an independent certificate of the result.
//!
//! With `Lambda = I - X*`, the range of `R*` lies in the kernel of `Lambda`,
//! so `R* = U Q U^T` for an orthonormal kernel basis `U`. The unknown `Q`
//! is pinned down by requiring the off-diagonal part of `U Q U^T` to match
//! `Sigma*`, plus `D_ii = 0` wherever the diagonal multiplier is active.

use serde::{Deserialize, Serialize};

use crate::dual::{dual_value_j, solve_dual, DualOptions, DualSolution};
use crate::error::{Error, Result};
use crate::estimation::{kl_divergence, CovarianceEstimate};
use crate::linalg::{Mat, SymMat, RANK_EPS_FLOOR};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecoveryOptions {
    /// Kernel cut, relative to `||Lambda||_2`.
    pub kernel_rel_tol: f64,
    /// Diagonal multipliers above this are treated as active.
    pub active_tol: f64,
    /// Least-squares weight of the active `D_ii = 0` equations relative to
    /// the off-diagonal ones; large, so they hold almost exactly.
    pub active_weight: f64,
    /// Eigenvalues of the (unit-norm) normal operator below this mark the
    /// system as rank-deficient.
    pub lstsq_rel_cut: f64,
    /// Inconsistency threshold, relative to `max |Sigma*|`.
    pub consistency_tol: f64,
    /// Negative eigenvalues of `Q` down to `-proj_tol (1 + ||Q||_2)` are clipped.
    pub proj_tol: f64,
    /// Rank cut reported for `R`, relative to its largest eigenvalue.
    pub rank_rel_tol: f64,
    /// Certification threshold on the normalized residuals.
    pub cert_tol: f64,
}

impl Default for RecoveryOptions {
    fn default() -> Self {
        Self {
            kernel_rel_tol: 1e-6,
            active_tol: 1e-8,
            active_weight: 100.0,
            lstsq_rel_cut: 1e-10,
            consistency_tol: 1e-4,
            proj_tol: 1e-6,
            rank_rel_tol: 1e-3,
            cert_tol: 1e-5,
        }
    }
}

/// `Sigma* = (Sigma_hat^{-1} + X*/lambda*)^{-1}`.
pub fn recover_sigma(sol: &DualSolution, est: &CovarianceEstimate) -> Result<SymMat> {
    est.sigma_hat_inv()
        .axpy(1.0 / sol.lambda(), sol.x())
        .inv_pd()
}

/// `Lambda = I + Gamma* - Theta* = I - X*`.
pub fn lambda_matrix(sol: &DualSolution) -> SymMat {
    sol.gamma.sub(&sol.theta).add_identity(1.0)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KernelBasis {
    /// `n x r`, orthonormal columns.
    pub u_tilde: Mat,
    /// Orthonormal complement, `n x (n - r)`.
    pub complement: Mat,
    pub spectrum: Vec<f64>,
    pub threshold: f64,
}

impl KernelBasis {
    pub fn dim(&self) -> usize {
        self.u_tilde.cols()
    }
}

/// Eigenvectors of `Lambda` whose eigenvalues are at most
/// `rel_tol * ||Lambda||_2`. An empty kernel is a valid answer.
pub fn kernel_basis(lambda: &SymMat, rel_tol: f64) -> Result<KernelBasis> {
    if !(rel_tol > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "kernel tolerance must be positive, got {rel_tol}"
        )));
    }
    let sd = lambda.eig()?;
    let norm = sd.values.iter().fold(0.0_f64, |m, w| m.max(w.abs()));
    let threshold = rel_tol * norm.max(RANK_EPS_FLOOR);
    let n = sd.n();
    let kernel: Vec<usize> = (0..n).filter(|&i| sd.values[i] <= threshold).collect();
    let rest: Vec<usize> = (0..n).filter(|&i| sd.values[i] > threshold).collect();
    Ok(KernelBasis {
        u_tilde: sd.vectors.select_cols(&kernel),
        complement: sd.vectors.select_cols(&rest),
        spectrum: sd.values,
        threshold,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QSolution {
    pub q: Option<SymMat>,
    pub r: SymMat,
    /// Max-abs residual of the linear system.
    pub residual: f64,
    pub non_unique: bool,
    /// Indices `i` with `D_ii = 0` imposed.
    pub active: Vec<usize>,
    /// Magnitude of the negative eigenvalue clipped to zero (0 if none).
    pub clipped: f64,
    /// Smallest eigenvalue of `Q` before clipping.
    pub min_eig_q: f64,
}

/// Least-squares solve for `Q` (see module docs). `gamma` is the diagonal
/// of `Gamma*`.
pub fn solve_for_q(
    u_tilde: &Mat,
    sigma_star: &SymMat,
    gamma: &[f64],
    opts: &RecoveryOptions,
) -> Result<QSolution> {
    let n = sigma_star.n();
    if u_tilde.rows() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: u_tilde.rows(),
        });
    }
    if gamma.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: gamma.len(),
        });
    }
    let r = u_tilde.cols();
    let active: Vec<usize> = (0..n).filter(|&i| gamma[i] > opts.active_tol).collect();
    if r == 0 {
        return Ok(QSolution {
            q: None,
            r: SymMat::zeros(n),
            residual: 0.0,
            non_unique: false,
            active,
            clipped: 0.0,
            min_eig_q: 0.0,
        });
    }

    let u = u_tilde;
    let rows: Vec<&[f64]> = (0..n).map(|i| u.row(i)).collect();
    let is_active = {
        let mut m = vec![false; n];
        active.iter().for_each(|&i| m[i] = true);
        m
    };
    let outer_sum = |w: &dyn Fn(usize) -> f64| {
        SymMat::from_upper_fn(r, |p, q| (0..n).map(|i| w(i) * rows[i][p] * rows[i][q]).sum())
    };

    // Weighted least squares over the off-diagonal entries (weight 1), the
    // active diagonals (weight w) and nothing else, in the Frobenius norm.
    // Since U^T U = I the normal operator is
    //   Q -> Q + sum_i c_i (u_i^T Q u_i) u_i u_i^T = (I + B C B^T) Q,
    // with c_i = -1 on free diagonals and w^2 - 1 on active ones, and B the
    // columns u_i u_i^T with Gram matrix G = (u_i . u_j)^2. On the range of
    // B it acts as I + S^{1/2} V^T C V S^{1/2} for G = V S V^T.
    let w2 = opts.active_weight * opts.active_weight;
    let cw: Vec<f64> = (0..n).map(|i| if is_active[i] { w2 - 1.0 } else { -1.0 }).collect();
    let c = SymMat::congruence(&u.transpose(), sigma_star)
        .add(&outer_sum(&|i| cw[i] * sigma_star.get(i, i)));
    let gram = SymMat::from_upper_fn(n, |a, b| {
        let dot: f64 = rows[a].iter().zip(rows[b]).map(|(x, y)| x * y).sum();
        dot * dot
    });
    let gd = gram.eig()?;
    let kept: Vec<usize> = (0..n).filter(|&k| gd.values[k] > RANK_EPS_FLOOR).collect();
    // columns of V S^{-1/2}: coefficients of an orthonormal basis of range(B)
    let basis = Mat::from_fn(n, kept.len(), |i, k| {
        gd.vectors[(i, kept[k])] / gd.values[kept[k]].sqrt()
    });
    let small = SymMat::from_upper_fn(kept.len(), |a, b| {
        let (sa, sb) = (gd.values[kept[a]].sqrt(), gd.values[kept[b]].sqrt());
        let vcv: f64 = (0..n)
            .map(|i| gd.vectors[(i, kept[a])] * cw[i] * gd.vectors[(i, kept[b])])
            .sum();
        sa * vcv * sb
    });
    let sd = small.eig()?;
    let mut q = c.clone();
    let mut non_unique = false;
    for (j, &t) in sd.values.iter().enumerate() {
        let z = sd.vectors.col(j);
        let coeff: Vec<f64> = (0..n)
            .map(|i| (0..kept.len()).map(|k| basis[(i, k)] * z[k]).sum())
            .collect();
        let e = outer_sum(&|i| coeff[i]);
        let proj = e.inner(&c)?;
        let eig_n = 1.0 + t;
        if eig_n <= opts.lstsq_rel_cut {
            // direction the weighted entries cannot see
            q = q.axpy(-proj, &e);
            non_unique = true;
        } else {
            q = q.axpy(proj * (1.0 / eig_n - 1.0), &e);
        }
    }

    let fitted = SymMat::congruence(u, &q);
    let mut residual = 0.0_f64;
    for i in 0..n {
        for j in i..n {
            if i != j || is_active[i] {
                residual = residual.max((fitted.get(i, j) - sigma_star.get(i, j)).abs());
            }
        }
    }
    let threshold = opts.consistency_tol * sigma_star.max_abs();
    if residual > threshold {
        return Err(Error::InconsistentSystem {
            residual,
            threshold,
        });
    }

    let sd = q.eig()?;
    let min = sd.min();
    let norm = sd.values.iter().fold(0.0_f64, |m, w| m.max(w.abs()));
    let tol = opts.proj_tol * (1.0 + norm);
    let mut clipped = 0.0;
    // a non-unique system has no preferred member; the minimum-norm one is
    // returned as-is and flagged
    if min < 0.0 && !non_unique {
        if min < -tol {
            return Err(Error::IndefiniteQ {
                min_eigenvalue: min,
                tolerance: tol,
            });
        }
        clipped = -min;
        q = sd.map(|w| w.max(0.0));
    }
    Ok(QSolution {
        r: SymMat::congruence(u, &q),
        q: Some(q),
        residual,
        non_unique,
        active,
        clipped,
        min_eig_q: min,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KktResiduals {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Decomposition {
    pub sigma: SymMat,
    pub r: SymMat,
    pub d: SymMat,
    pub rank_r: usize,
    pub kernel_dim: usize,
    pub duality_gap: f64,
    pub kkt: KktResiduals,
    pub kl_to_sigma_hat: f64,
    /// `|2 KL(Sigma* || Sigma_hat) - delta|`.
    pub boundary_residual: f64,
    /// Largest off-diagonal entry of `Sigma* - R*`.
    pub off_diagonal_residual: f64,
    pub lambda_spectrum: Vec<f64>,
    pub kernel_threshold: f64,
    pub q: Option<SymMat>,
    /// `A = U_tilde Q^{1/2}`, so `R = A A^T`.
    pub loadings: Mat,
    pub system_residual: f64,
    pub non_unique: bool,
}

/// Runs the full recovery: `Sigma*`, kernel of `Lambda`, `Q`, `R`, `D`.
pub fn recover(
    sol: &DualSolution,
    est: &CovarianceEstimate,
    opts: &RecoveryOptions,
) -> Result<Decomposition> {
    let sigma = recover_sigma(sol, est)?;
    let lambda = lambda_matrix(sol);
    let kernel = kernel_basis(&lambda, opts.kernel_rel_tol)?;
    let qs = solve_for_q(&kernel.u_tilde, &sigma, &sol.gamma.diag(), opts)?;
    let r = qs.r;
    let diff = sigma.sub(&r);
    let d = diff.diag_part();

    let kl = kl_divergence(&sigma, est)?;
    let j = dual_value_j(sol.lambda(), &sol.gamma, &sol.theta, est, sol.delta)?;
    let kkt = KktResiduals {
        c1: lambda.inner(&r)?.abs(),
        c2: sol.gamma.inner(&diff)?.abs(),
        c3: sol.theta.inner(&diff)?.abs(),
    };
    let loadings = match &qs.q {
        Some(q) => {
            let half = q.eig()?.map(|w| w.max(0.0).sqrt());
            kernel.u_tilde.matmul(&half.to_dense())
        }
        None => Mat::zeros(sigma.n(), 0),
    };
    Ok(Decomposition {
        rank_r: r.numerical_rank(opts.rank_rel_tol)?,
        kernel_dim: kernel.dim(),
        duality_gap: (r.trace() - j).abs(),
        kkt,
        kl_to_sigma_hat: kl,
        boundary_residual: (2.0 * kl - sol.delta).abs(),
        off_diagonal_residual: diff.max_abs_off_diag(),
        lambda_spectrum: kernel.spectrum,
        kernel_threshold: kernel.threshold,
        q: qs.q,
        loadings,
        system_residual: qs.residual,
        non_unique: qs.non_unique,
        sigma,
        r,
        d,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CertReport {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub gap: f64,
    pub boundary: f64,
    /// `1 + tr R`; every field above is already divided by it.
    pub normalizer: f64,
    pub threshold: f64,
    pub passed: bool,
}

/// Recomputes every optimality residual of `dec` from scratch against the
/// dual solution, normalized by `1 + tr R`.
pub fn certify(
    dec: &Decomposition,
    sol: &DualSolution,
    est: &CovarianceEstimate,
    delta: f64,
    threshold: f64,
) -> Result<CertReport> {
    let lambda = lambda_matrix(sol);
    let diff = dec.sigma.sub(&dec.r);
    let tr = dec.r.trace();
    let norm = 1.0 + tr.abs();
    let j = dual_value_j(sol.lambda(), &sol.gamma, &sol.theta, est, delta)?;
    let kl = kl_divergence(&dec.sigma, est)?;
    let c1 = lambda.inner(&dec.r)?.abs() / norm;
    let c2 = sol.gamma.inner(&diff)?.abs() / norm;
    let c3 = sol.theta.inner(&diff)?.abs() / norm;
    let gap = (tr - j).abs() / norm;
    let boundary = (2.0 * kl - delta).abs() / norm;
    let passed = [c1, c2, c3, gap, boundary]
        .iter()
        .all(|v| v.is_finite() && *v <= threshold);
    Ok(CertReport {
        c1,
        c2,
        c3,
        gap,
        boundary,
        normalizer: norm,
        threshold,
        passed,
    })
}

/// Dual solve, recovery and certification in one call.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RobustResult {
    pub solution: DualSolution,
    pub decomposition: Decomposition,
    pub certificate: CertReport,
}

pub fn solve_robust(
    est: &CovarianceEstimate,
    delta: f64,
    dual_opts: &DualOptions,
    opts: &RecoveryOptions,
) -> Result<RobustResult> {
    let solution = solve_dual(est, delta, dual_opts)?;
    let decomposition = recover(&solution, est, opts)?;
    let certificate = certify(&decomposition, &solution, est, delta, opts.cert_tol)?;
    Ok(RobustResult {
        solution,
        decomposition,
        certificate,
    })
}
