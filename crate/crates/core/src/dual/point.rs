use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::CovarianceEstimate;
use crate::linalg::SymMat;

/// Slack on `lambda_max(X) <= 1`.
pub const EIG_SLACK: f64 = 1e-10;
/// Slack on `X_ii <= 0`.
pub const DIAG_SLACK: f64 = 1e-12;

/// A member `(lambda, X)` of the feasible set, with
/// `W = Sigma_hat^{-1} + X / lambda` and its log-determinant cached.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DualPoint {
    lambda: f64,
    x: SymMat,
    w: SymMat,
    logdet_w: f64,
}

impl DualPoint {
    /// Checks every membership condition.
    pub fn new(lambda: f64, x: SymMat, est: &CovarianceEstimate) -> Result<Self> {
        if x.n() != est.n() {
            return Err(Error::DimensionMismatch {
                expected: est.n(),
                actual: x.n(),
            });
        }
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::InfeasiblePoint(format!("lambda = {lambda} must be positive")));
        }
        if let Some((i, d)) = x
            .diag()
            .into_iter()
            .enumerate()
            .find(|(_, d)| *d > DIAG_SLACK)
        {
            return Err(Error::InfeasiblePoint(format!(
                "diagonal entry X[{i}][{i}] = {d:e} is positive"
            )));
        }
        let top = x.eigenvalues()?[0];
        if top > 1.0 + EIG_SLACK {
            return Err(Error::InfeasiblePoint(format!(
                "largest eigenvalue of X is {top}, exceeding 1"
            )));
        }
        Self::with_domain_check(lambda, x, est)
    }

    /// Only checks `W > 0`; the caller guarantees the other conditions.
    pub(crate) fn with_domain_check(
        lambda: f64,
        x: SymMat,
        est: &CovarianceEstimate,
    ) -> Result<Self> {
        let w = est.sigma_hat_inv().axpy(1.0 / lambda, &x);
        let logdet_w = match w.logdet_pd() {
            Ok(v) => v,
            Err(_) => {
                return Err(Error::InfeasiblePoint(
                    "Sigma_hat^{-1} + X / lambda is not positive definite".into(),
                ))
            }
        };
        Ok(Self {
            lambda,
            x,
            w,
            logdet_w,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn x(&self) -> &SymMat {
        &self.x
    }

    pub fn w(&self) -> &SymMat {
        &self.w
    }

    pub fn logdet_w(&self) -> f64 {
        self.logdet_w
    }

    /// `Sigma(lambda, X) = W^{-1}`, the covariance minimizing the Lagrangian.
    pub fn sigma(&self) -> Result<SymMat> {
        self.w.inv_pd()
    }
}

/// `F(lambda, X) = -lambda [log|Sigma_hat^{-1} + X/lambda| + log|Sigma_hat| - delta]`.
pub fn dual_objective(p: &DualPoint, est: &CovarianceEstimate, delta: f64) -> f64 {
    -p.lambda * (p.logdet_w + est.logdet() - delta)
}

#[derive(Debug, Clone)]
pub struct DualGradient {
    pub d_lambda: f64,
    pub d_x: SymMat,
}

/// Gradient of `F`: `dF/dX = -W^{-1}`,
/// `dF/dlambda = -[log|W| + log|Sigma_hat| - delta] + tr(W^{-1} X) / lambda`.
pub fn dual_gradient(p: &DualPoint, est: &CovarianceEstimate, delta: f64) -> Result<DualGradient> {
    let sigma = p.sigma()?;
    Ok(gradient_from_sigma(p, &sigma, est, delta))
}

pub(crate) fn gradient_from_sigma(
    p: &DualPoint,
    sigma: &SymMat,
    est: &CovarianceEstimate,
    delta: f64,
) -> DualGradient {
    let tr = sigma.inner(&p.x).expect("same dimension");
    DualGradient {
        d_lambda: -(p.logdet_w + est.logdet() - delta) + tr / p.lambda,
        d_x: sigma.scale(-1.0),
    }
}

/// Dual function in the original multipliers,
/// `J = lambda (log|Sigma_hat^{-1} + (chi(Theta) - Gamma)/lambda| + log|Sigma_hat| - delta)`.
pub fn dual_value_j(
    lambda: f64,
    gamma: &SymMat,
    theta: &SymMat,
    est: &CovarianceEstimate,
    delta: f64,
) -> Result<f64> {
    let inner = est
        .sigma_hat_inv()
        .axpy(1.0 / lambda, &theta.chi().sub(gamma));
    Ok(lambda * (inner.logdet_pd()? + est.logdet() - delta))
}
