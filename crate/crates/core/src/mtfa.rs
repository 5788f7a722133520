//! Minimum-trace factor analysis: `min tr R` subject to `R >= 0`,
//! `D` diagonal `>= 0`, `R + D = Sigma`.
//!
//! Solved by alternating directions on `(R, D)` with scaled multiplier `U`:
//!
//! ```text
//! R <- P_psd(Sigma - D - U - I/rho)
//! D <- max(0, diag(Sigma - R - U))
//! U <- U + R + D - Sigma
//! ```
//!
//! The unscaled multiplier `Y = rho U` gives the certificate
//! `Lambda = I + Y`, which must be PSD and orthogonal to `R`, with
//! `diag(Y) >= 0` complementary to `D`.

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::SymMat;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MtfaOptions {
    /// Relative tolerance on the primal and dual residuals.
    pub tol: f64,
    pub max_iter: usize,
    /// Initial penalty times `||Sigma||_F`; keeps the iteration scale-free.
    pub rho_scaled: f64,
    /// Rebalance when one residual exceeds the other by this ratio.
    pub balance_ratio: f64,
    pub balance_factor: f64,
    /// Relative tolerance of the certificate that must also hold to stop.
    pub cert_tol: f64,
}

impl Default for MtfaOptions {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            max_iter: 50_000,
            rho_scaled: 1.0,
            balance_ratio: 10.0,
            balance_factor: 2.0,
            cert_tol: 1e-6,
        }
    }
}

/// Optimality certificate recovered from the multiplier.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MtfaCertificate {
    /// `Lambda = I + Gamma - Theta`, with `Gamma = diag(Y)`, `Theta = -chi(Y)`.
    pub lambda: SymMat,
    pub gamma: SymMat,
    pub theta: SymMat,
    pub min_eig_lambda: f64,
    /// `|tr(Lambda R)|`.
    pub complementarity: f64,
    /// `max_i |gamma_i D_ii|`.
    pub diag_complementarity: f64,
    /// Most negative diagonal multiplier (0 if none).
    pub gamma_violation: f64,
}

impl MtfaCertificate {
    /// The tolerances are relative: `Lambda >= -tol I`, `|tr(Lambda R)| <= tol tr R`.
    pub fn holds(&self, trace_r: f64, tol: f64) -> bool {
        self.min_eig_lambda >= -tol
            && self.complementarity <= tol * trace_r.max(tol)
            && self.gamma_violation <= tol
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MtfaSolution {
    pub r: SymMat,
    pub d: SymMat,
    pub trace_r: f64,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub converged: bool,
    pub rho: f64,
    pub certificate: MtfaCertificate,
}

pub fn solve_mtfa(sigma: &SymMat, opts: &MtfaOptions) -> Result<MtfaSolution> {
    if !sigma.is_finite() {
        return Err(Error::InvalidData("Sigma has non-finite entries".into()));
    }
    sigma.cholesky()?;
    if !(opts.tol > 0.0 && opts.rho_scaled > 0.0 && opts.balance_factor > 1.0) {
        return Err(Error::InvalidParameter(
            "tol and rho must be positive, balance factor above 1".into(),
        ));
    }
    let n = sigma.n();
    let scale = sigma.frobenius_norm();
    let stop = opts.tol * scale;
    let mut rho = opts.rho_scaled / scale;

    let mut d = sigma.diag_part();
    let mut u = SymMat::zeros(n);
    let mut r = SymMat::zeros(n);
    let (mut primal, mut dual) = (f64::INFINITY, f64::INFINITY);
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        iterations += 1;
        let target = sigma.sub(&d).sub(&u).add_identity(-1.0 / rho);
        r = target.eig()?.map(|w| w.max(0.0));

        let base = sigma.sub(&r).sub(&u);
        let d_new = SymMat::from_diag(&base.diag().iter().map(|v| v.max(0.0)).collect::<Vec<_>>());
        let gap = r.add(&d_new).sub(sigma);
        u = u.add(&gap);
        primal = gap.frobenius_norm();
        // the R-subproblem's optimality is perturbed by rho * (D_new - D);
        // that multiplier is dimensionless, so bring it to the units of Sigma
        // to keep balancing and stopping scale-equivariant
        dual = rho * scale * d_new.sub(&d).frobenius_norm();
        d = d_new;

        // small residuals alone can stop on a plateau of the multiplier
        if primal <= stop
            && dual <= stop
            && certificate(&u.scale(rho), &r, &d)?.holds(r.trace(), opts.cert_tol)
        {
            converged = true;
            break;
        }
        if primal > opts.balance_ratio * dual {
            rho *= opts.balance_factor;
            u = u.scale(1.0 / opts.balance_factor);
        } else if dual > opts.balance_ratio * primal {
            rho /= opts.balance_factor;
            u = u.scale(opts.balance_factor);
        }
        if iterations % 5000 == 0 {
            debug!("mtfa iter {iterations}: primal {primal:.3e}, dual {dual:.3e}, rho {rho:.3e}");
        }
    }
    if !converged {
        warn!("mtfa stopped after {iterations} iterations: primal {primal:.3e}, dual {dual:.3e}");
    }

    let certificate = certificate(&u.scale(rho), &r, &d)?;
    Ok(MtfaSolution {
        trace_r: r.trace(),
        r,
        d,
        iterations,
        primal_residual: primal,
        dual_residual: dual,
        converged,
        rho,
        certificate,
    })
}

fn certificate(y: &SymMat, r: &SymMat, d: &SymMat) -> Result<MtfaCertificate> {
    let gamma = y.diag_part();
    let theta = y.chi().scale(-1.0);
    let lambda = gamma.sub(&theta).add_identity(1.0);
    let min_eig_lambda = *lambda.eigenvalues()?.last().expect("n >= 1");
    let complementarity = lambda.inner(r)?.abs();
    let g = gamma.diag();
    let diag_complementarity = g
        .iter()
        .zip(d.diag())
        .map(|(gi, di)| (gi * di).abs())
        .fold(0.0, f64::max);
    let gamma_violation = g.iter().map(|gi| (-gi).max(0.0)).fold(0.0, f64::max);
    Ok(MtfaCertificate {
        lambda,
        gamma,
        theta,
        min_eig_lambda,
        complementarity,
        diag_complementarity,
        gamma_violation,
    })
}

/// Top-`k` singular values of a symmetric matrix (`|eigenvalues|`,
/// nonincreasing).
pub fn singular_value_report(m: &SymMat, k: usize) -> Result<Vec<f64>> {
    m.singular_values(k)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_sigma_has_zero_r() {
        let sigma = SymMat::from_diag(&[1.0, 2.0, 0.5]);
        let sol = solve_mtfa(&sigma, &MtfaOptions::default()).unwrap();
        assert!(sol.converged);
        assert!(sol.r.max_abs() < 1e-9);
        assert!(sol.d.sub(&sigma).max_abs() < 1e-9);
    }

    #[test]
    fn two_by_two() {
        let sigma = SymMat::from_upper_fn(2, |i, j| if i == j { 2.0 } else { 1.0 });
        let sol = solve_mtfa(&sigma, &MtfaOptions::default()).unwrap();
        assert!(sol.converged);
        assert!((sol.trace_r - 2.0).abs() < 1e-6, "tr R = {}", sol.trace_r);
        let expect = SymMat::from_upper_fn(2, |_, _| 1.0);
        assert!(sol.r.sub(&expect).max_abs() < 1e-6);
    }

    #[test]
    fn rejects_indefinite() {
        let sigma = SymMat::from_upper_fn(2, |i, j| if i == j { 1.0 } else { 2.0 });
        assert!(matches!(
            solve_mtfa(&sigma, &MtfaOptions::default()),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn report_examples() {
        assert_eq!(singular_value_report(&SymMat::identity(5), 3).unwrap(), vec![1.0; 3]);
        let ones = SymMat::from_upper_fn(2, |_, _| 1.0);
        let sv = singular_value_report(&ones, 2).unwrap();
        assert!((sv[0] - 2.0).abs() < 1e-15 && sv[1].abs() < 1e-15);
    }
}
