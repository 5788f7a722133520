#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rfa_core::estimation::CovarianceEstimate;
use rfa_core::{Mat, SymMat};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_sym(rng: &mut impl Rng, n: usize) -> SymMat {
    SymMat::from_upper_fn(n, |_, _| rng.random_range(-1.0..1.0))
}

/// `G G^T / n + 0.1 I` — comfortably positive definite.
pub fn random_pd(rng: &mut impl Rng, n: usize) -> SymMat {
    let g = Mat::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let gg = g.matmul(&g.transpose());
    SymMat::from_upper_fn(n, |i, j| gg[(i, j)] / n as f64).add_identity(0.1)
}

pub fn estimate(s: SymMat) -> CovarianceEstimate {
    CovarianceEstimate::from_sigma_hat(s, 0).unwrap()
}

pub fn to_na(m: &SymMat) -> nalgebra::DMatrix<f64> {
    let n = m.n();
    nalgebra::DMatrix::from_fn(n, n, |i, j| m.get(i, j))
}

pub fn max_abs_diff(a: &SymMat, b: &SymMat) -> f64 {
    a.sub(b).max_abs()
}
