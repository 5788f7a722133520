//! Ground-truth factor models `x = A w_y + B w_z` and finite-sample data.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Mat, SymMat};

/// Stream used for model parameters; data draws use [`DATA_STREAM`].
const MODEL_STREAM: u64 = 0;
const DATA_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorModelSpec {
    pub n: usize,
    pub r: usize,
    /// Loadings are `scale * N(0, 1)`.
    pub loading_scale: f64,
    /// Diagonal entries of `B` are uniform on this interval.
    pub noise_range: (f64, f64),
    pub seed: u64,
}

impl FactorModelSpec {
    pub fn new(n: usize, r: usize, seed: u64) -> Self {
        Self {
            n,
            r,
            loading_scale: 1.0,
            noise_range: (0.1, 1.0),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r >= 1 && self.r < self.n) {
            return Err(Error::InvalidParameter(format!(
                "need 1 <= r < n, got n = {}, r = {}",
                self.n, self.r
            )));
        }
        let (lo, hi) = self.noise_range;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "noise range must satisfy 0 < lo <= hi, got ({lo}, {hi})"
            )));
        }
        if !(self.loading_scale > 0.0 && self.loading_scale.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "loading scale must be positive, got {}",
                self.loading_scale
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruth {
    /// `n x r` loadings.
    pub a: Mat,
    /// Diagonal of `B`.
    pub b: Vec<f64>,
    pub sigma: SymMat,
    pub r_true: SymMat,
    pub d_true: SymMat,
}

fn rng_for(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draws `A` and `B` deterministically from `spec.seed`.
pub fn generate_model(spec: &FactorModelSpec) -> Result<GroundTruth> {
    spec.validate()?;
    let (n, r) = (spec.n, spec.r);
    let mut rng = rng_for(spec.seed, MODEL_STREAM);
    let a = loop {
        let a = Mat::from_fn(n, r, |_, _| {
            spec.loading_scale * rng.sample::<f64, _>(StandardNormal)
        });
        // rank(A A^T) = rank(A^T A); redraw on the measure-zero degenerate case
        let gram = SymMat::from_upper_fn(r, |i, j| {
            (0..n).map(|k| a[(k, i)] * a[(k, j)]).sum()
        });
        if gram.numerical_rank(1e-12)? == r {
            break a;
        }
    };
    let (lo, hi) = spec.noise_range;
    let b: Vec<f64> = (0..n)
        .map(|_| if hi > lo { rng.random_range(lo..hi) } else { lo })
        .collect();
    let r_true = SymMat::from_upper_fn(n, |i, j| {
        a.row(i).iter().zip(a.row(j)).map(|(x, y)| x * y).sum()
    });
    let d_true = SymMat::from_diag(&b.iter().map(|v| v * v).collect::<Vec<_>>());
    let sigma = r_true.add(&d_true);
    Ok(GroundTruth {
        a,
        b,
        sigma,
        r_true,
        d_true,
    })
}

/// `N` zero-mean Gaussian draws with covariance `gt.sigma`, one per column,
/// formed as `L z` with `L` the Cholesky factor and `z` standard normal.
pub fn sample_data(gt: &GroundTruth, samples: usize, seed: u64) -> Result<Mat> {
    sample_gaussian(&gt.sigma, samples, seed)
}

pub fn sample_gaussian(sigma: &SymMat, samples: usize, seed: u64) -> Result<Mat> {
    if samples == 0 {
        return Err(Error::InvalidParameter("need at least one sample".into()));
    }
    let n = sigma.n();
    let chol = sigma.cholesky()?;
    let l = chol.factor();
    let mut rng = rng_for(seed, DATA_STREAM);
    let mut out = Mat::zeros(n, samples);
    let mut z = vec![0.0; n];
    for k in 0..samples {
        for zi in z.iter_mut() {
            *zi = rng.sample(StandardNormal);
        }
        for i in 0..n {
            let row = l.row(i);
            out[(i, k)] = (0..=i).map(|j| row[j] * z[j]).sum();
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_model_structure() {
        let gt = generate_model(&FactorModelSpec::new(2, 1, 7)).unwrap();
        assert_eq!(gt.r_true.numerical_rank(1e-10).unwrap(), 1);
        assert!(gt.sigma.sub(&gt.r_true).sub(&gt.d_true).max_abs() == 0.0);
        assert!(gt.sigma.cholesky().is_ok());
    }

    #[test]
    fn fifty_by_four_model_has_rank_four() {
        let gt = generate_model(&FactorModelSpec::new(50, 4, 0)).unwrap();
        assert_eq!(gt.r_true.numerical_rank(1e-10).unwrap(), 4);
        // Sigma - R_true is exactly the diagonal noise covariance
        let d = gt.sigma.sub(&gt.r_true);
        assert_eq!(d.max_abs_off_diag(), 0.0);
    }

    #[test]
    fn deterministic_given_seed() {
        let spec = FactorModelSpec::new(6, 2, 42);
        let a = generate_model(&spec).unwrap();
        let b = generate_model(&spec).unwrap();
        assert_eq!(a.sigma, b.sigma);
        assert_eq!(sample_data(&a, 10, 3).unwrap(), sample_data(&b, 10, 3).unwrap());
        assert_ne!(sample_data(&a, 10, 3).unwrap(), sample_data(&a, 10, 4).unwrap());
    }

    #[test]
    fn single_sample_shape() {
        let gt = generate_model(&FactorModelSpec::new(5, 2, 1)).unwrap();
        let x = sample_data(&gt, 1, 0).unwrap();
        assert_eq!((x.rows(), x.cols()), (5, 1));
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(generate_model(&FactorModelSpec::new(3, 3, 0)).is_err());
        assert!(generate_model(&FactorModelSpec::new(3, 0, 0)).is_err());
        let mut s = FactorModelSpec::new(3, 1, 0);
        s.noise_range = (0.0, 1.0);
        assert!(generate_model(&s).is_err());
    }
}
