//! Sample covariance, Gaussian KL divergence and the tolerance ceiling
//! `delta_max` above which the trivial (diagonal) solution becomes feasible.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Mat, SymMat};

/// Below this, `delta_max` is treated as zero (diagonal sample covariance).
pub const DEGENERATE_DELTA_MAX: f64 = 1e-12;

/// Options for [`sample_covariance`]. The defaults give the plain
/// zero-mean `1/N` estimator.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SampleCovOptions {
    /// Subtract the sample mean before forming outer products.
    pub center: bool,
    /// Normalize by `N - 1` instead of `N`.
    pub unbiased: bool,
    /// Added to the diagonal, `+ ridge * I`.
    pub ridge: f64,
}

/// Sample covariance with its cached inverse and log-determinant.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CovarianceEstimate {
    samples: usize,
    sigma_hat: SymMat,
    sigma_hat_inv: SymMat,
    logdet: f64,
}

impl CovarianceEstimate {
    /// Wraps an already-formed covariance. Errors unless it is positive
    /// definite. `samples` is informational; 0 means unknown.
    pub fn from_sigma_hat(sigma_hat: SymMat, samples: usize) -> Result<Self> {
        let chol = sigma_hat.cholesky()?;
        Ok(Self {
            samples,
            sigma_hat_inv: chol.inverse(),
            logdet: chol.logdet(),
            sigma_hat,
        })
    }

    pub fn n(&self) -> usize {
        self.sigma_hat.n()
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn sigma_hat(&self) -> &SymMat {
        &self.sigma_hat
    }

    pub fn sigma_hat_inv(&self) -> &SymMat {
        &self.sigma_hat_inv
    }

    pub fn logdet(&self) -> f64 {
        self.logdet
    }
}

/// Forms `Sigma_hat = (1/N) sum_k x_k x_k^T` from an `n x N` data matrix
/// (one observation per column).
pub fn sample_covariance(data: &Mat, opts: SampleCovOptions) -> Result<CovarianceEstimate> {
    let (n, samples) = (data.rows(), data.cols());
    if n == 0 || samples == 0 {
        return Err(Error::InvalidData(format!(
            "data matrix must be non-empty, got {n} x {samples}"
        )));
    }
    if !data.is_finite() {
        return Err(Error::InvalidData("data contains non-finite values".into()));
    }
    if opts.ridge < 0.0 || !opts.ridge.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "ridge must be finite and non-negative, got {}",
            opts.ridge
        )));
    }
    let denom = if opts.unbiased {
        if samples < 2 {
            return Err(Error::InvalidParameter(
                "the 1/(N-1) normalization needs at least two samples".into(),
            ));
        }
        (samples - 1) as f64
    } else {
        samples as f64
    };

    let means: Vec<f64> = if opts.center {
        (0..n)
            .map(|i| data.row(i).iter().sum::<f64>() / samples as f64)
            .collect()
    } else {
        vec![0.0; n]
    };
    let centered = Mat::from_fn(n, samples, |i, k| data[(i, k)] - means[i]);
    let sigma = SymMat::from_upper_fn(n, |i, j| {
        let s: f64 = centered
            .row(i)
            .iter()
            .zip(centered.row(j))
            .map(|(a, b)| a * b)
            .sum();
        s / denom
    })
    .add_identity(opts.ridge);

    let effective = if opts.center { samples - 1 } else { samples };
    if opts.ridge == 0.0 && effective < n {
        return Err(Error::SingularCovariance {
            reason: format!("{samples} samples for {n} variables"),
        });
    }
    match CovarianceEstimate::from_sigma_hat(sigma, samples) {
        Err(Error::NotPositiveDefinite { pivot, .. }) => Err(Error::SingularCovariance {
            reason: format!("data are rank deficient (Cholesky failed at pivot {pivot})"),
        }),
        other => other,
    }
}

/// `D_KL(N(0, Sigma) || N(0, Sigma_hat))
///   = 1/2 (-log|Sigma| + log|Sigma_hat| + tr(Sigma Sigma_hat^{-1}) - n)`.
pub fn kl_divergence(sigma: &SymMat, est: &CovarianceEstimate) -> Result<f64> {
    let logdet_sigma = sigma.logdet_pd()?;
    let tr = sigma.inner(est.sigma_hat_inv())?;
    Ok(0.5 * (-logdet_sigma + est.logdet() + tr - est.n() as f64))
}

/// The tolerance ceiling together with its diagonal minimizer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeltaMax {
    /// `log |[S^{-1} - chi(S^{-1})] S|` with `S = Sigma_hat`.
    pub delta_max: f64,
    /// `diag(1/gamma_i)` where `gamma_i = (Sigma_hat^{-1})_ii`.
    pub sigma_d: SymMat,
    /// `D_KL(sigma_d || Sigma_hat)`; equals `delta_max / 2`.
    pub kl_of_sigma_d: f64,
}

pub fn delta_max(est: &CovarianceEstimate) -> Result<DeltaMax> {
    let gamma = est.sigma_hat_inv().diag();
    if gamma.iter().any(|g| !(*g > 0.0)) {
        return Err(Error::NotPositiveDefinite {
            pivot: 0,
            value: gamma.iter().cloned().fold(f64::INFINITY, f64::min),
        });
    }
    // |diag(gamma) Sigma_hat| = prod(gamma_i) |Sigma_hat|
    let delta_max = gamma.iter().map(|g| g.ln()).sum::<f64>() + est.logdet();
    let sigma_d = SymMat::from_diag(&gamma.iter().map(|g| 1.0 / g).collect::<Vec<_>>());
    let kl_of_sigma_d = kl_divergence(&sigma_d, est)?;
    Ok(DeltaMax {
        // rounding can push a diagonal Sigma_hat a hair below zero
        delta_max: delta_max.max(0.0),
        sigma_d,
        kl_of_sigma_d,
    })
}

/// KL tolerance `delta` with the ceiling it was checked against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerance {
    pub delta: f64,
    pub delta_max: f64,
    /// Set when `delta` was derived as `fraction * delta_max`.
    pub fraction: Option<f64>,
}

/// `delta = fraction * delta_max` for `0 < fraction < 1`.
pub fn make_tolerance(est: &CovarianceEstimate, fraction: f64) -> Result<Tolerance> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "delta fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let dm = delta_max(est)?.delta_max;
    if dm <= DEGENERATE_DELTA_MAX {
        return Err(Error::DegenerateTolerance { delta_max: dm });
    }
    Ok(Tolerance {
        delta: fraction * dm,
        delta_max: dm,
        fraction: Some(fraction),
    })
}

/// Validates an explicit `delta` against the ceiling.
pub fn absolute_tolerance(est: &CovarianceEstimate, delta: f64) -> Result<Tolerance> {
    let dm = delta_max(est)?.delta_max;
    if !(delta > 0.0) || delta >= dm {
        return Err(Error::DeltaTooLarge {
            delta,
            delta_max: dm,
        });
    }
    Ok(Tolerance {
        delta,
        delta_max: dm,
        fraction: None,
    })
}
