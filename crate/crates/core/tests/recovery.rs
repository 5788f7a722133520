mod common;

use approx::assert_relative_eq;
use rand::Rng;
use rfa_core::dual::{solve_dual, DualOptions, DualPoint, DualSolution};
use rfa_core::estimation::{delta_max, kl_divergence, CovarianceEstimate};
use rfa_core::linalg::lstsq_min_norm;
use rfa_core::recovery::*;
use rfa_core::simulator::{generate_model, sample_data, FactorModelSpec};
use rfa_core::estimation::{sample_covariance, SampleCovOptions};
use rfa_core::{Mat, SymMat};

use common::*;

fn solution_at(lambda: f64, x: SymMat, est: &CovarianceEstimate, delta: f64) -> DualSolution {
    let point = DualPoint::new(lambda, x.clone(), est).unwrap();
    DualSolution {
        sigma: point.sigma().unwrap(),
        theta: x.chi(),
        gamma: x.chi().sub(&x),
        point,
        objective: 0.0,
        grad_norm: 0.0,
        iterations: 0,
        converged: true,
        delta,
        trace: Vec::new(),
    }
}

/// `Sigma_hat` from a simulated factor model with `N = 10 n` samples.
fn simulated(n: usize, r: usize, seed: u64) -> CovarianceEstimate {
    let gt = generate_model(&FactorModelSpec::new(n, r, seed)).unwrap();
    let data = sample_data(&gt, 10 * n, seed).unwrap();
    sample_covariance(&data, SampleCovOptions::default()).unwrap()
}

#[test]
fn recover_sigma_examples() {
    let est = estimate(SymMat::identity(1));
    let sol = solution_at(1.0, SymMat::from_diag(&[-0.5]), &est, 0.1);
    assert_relative_eq!(recover_sigma(&sol, &est).unwrap().get(0, 0), 2.0, epsilon = 1e-14);

    let mut g = rng(1);
    let est = estimate(random_pd(&mut g, 5));
    let sol = solution_at(0.7, SymMat::zeros(5), &est, 0.1);
    assert!(max_abs_diff(&recover_sigma(&sol, &est).unwrap(), est.sigma_hat()) <= 1e-12);
    assert_eq!(lambda_matrix(&sol), SymMat::identity(5));
}

#[test]
fn kernel_of_lambda_with_multiplicity_four() {
    let mut g = rng(4);
    let n = 9;
    let v = random_pd(&mut g, n).eig().unwrap().vectors;
    let mut w = vec![1.0; 4];
    w.extend((4..n).map(|_| g.random_range(-2.0..0.5)));
    let x = SymMat::from_congruence(&v, &w);
    let lambda = SymMat::identity(n).sub(&x);
    let k = kernel_basis(&lambda, 1e-6).unwrap();
    assert_eq!(k.dim(), 4);
    let cross = k.u_tilde.transpose().matmul(&k.complement);
    assert!(cross.max_abs() <= 1e-10);
    let utu = k.u_tilde.transpose().matmul(&k.u_tilde);
    assert!((0..4).all(|i| (0..4).all(|j| (utu[(i, j)] - if i == j { 1.0 } else { 0.0 }).abs() <= 1e-12)));
    // Lambda U = 0
    let lu = lambda.to_dense().matmul(&k.u_tilde);
    assert!(lu.max_abs() <= 1e-10);
}

/// The vectorized system in the same weighting the recovery uses:
/// off-diagonal rows and off-diagonal unknowns carry a factor sqrt(2), so
/// both the residual and the solution norm are Frobenius norms; active
/// diagonal rows carry `active_weight`.
fn q_oracle(u: &Mat, sigma: &SymMat, active: &[usize], active_weight: f64) -> SymMat {
    let (n, r) = (u.rows(), u.cols());
    let s2 = 2f64.sqrt();
    let unknowns: Vec<(usize, usize)> = (0..r).flat_map(|a| (a..r).map(move |b| (a, b))).collect();
    let mut rows = Vec::new();
    let mut rhs = Vec::new();
    for i in 0..n {
        for j in i..n {
            if i == j && !active.contains(&i) {
                continue;
            }
            let w = if i == j { active_weight } else { s2 };
            let row: Vec<f64> = unknowns
                .iter()
                .map(|&(a, b)| {
                    let coef = if a == b {
                        u[(i, a)] * u[(j, a)]
                    } else {
                        // q_ab (u_ia u_jb + u_ib u_ja), unknown is sqrt(2) q_ab
                        (u[(i, a)] * u[(j, b)] + u[(i, b)] * u[(j, a)]) / s2
                    };
                    w * coef
                })
                .collect();
            rows.push(row);
            rhs.push(w * sigma.get(i, j));
        }
    }
    let a = Mat::from_rows(&rows);
    let sol = lstsq_min_norm(&a, &rhs, 1e-10);
    let mut it = sol.x.into_iter();
    let mut q = SymMat::zeros(r);
    for &(a, b) in &unknowns {
        let v = it.next().unwrap();
        q.set(a, b, if a == b { v } else { v / s2 });
    }
    q
}

#[test]
fn q_matches_dense_least_squares_oracle() {
    let mut g = rng(77);
    let opts = RecoveryOptions::default();
    for k in 0..20 {
        let n = 4 + k % 6;
        let r = 1 + k % 3;
        let basis = random_pd(&mut g, n).eig().unwrap().vectors.select_cols(&(0..r).collect::<Vec<_>>());
        let g0 = Mat::from_fn(r, r, |_, _| g.random_range(-1.0..1.0));
        let q0 = SymMat::from_upper_fn(r, |i, j| (0..r).map(|l| g0[(i, l)] * g0[(j, l)]).sum::<f64>()).add_identity(0.1);
        let mut gamma = vec![0.0; n];
        let mut d = vec![0.0; n];
        for i in 0..n {
            if g.random_bool(0.3) {
                gamma[i] = 1.0;
            } else {
                d[i] = g.random_range(0.1..1.0);
            }
        }
        // small noise keeps the system slightly inconsistent
        let noise = random_sym(&mut g, n).scale(1e-7);
        let sigma = SymMat::congruence(&basis, &q0).add_diag(&d).add(&noise);
        let active: Vec<usize> = (0..n).filter(|&i| gamma[i] > 0.0).collect();
        let ours = solve_for_q(&basis, &sigma, &gamma, &opts).unwrap();
        assert_eq!(ours.active, active);
        let oracle = q_oracle(&basis, &sigma, &active, opts.active_weight);
        let q = ours.q.unwrap();
        assert!(max_abs_diff(&q, &oracle) <= 1e-8, "instance {k}: {}", max_abs_diff(&q, &oracle));
        assert_eq!(ours.non_unique, false, "instance {k}");
    }
}

#[test]
fn pipeline_invariants_on_simulated_data() {
    let opts = RecoveryOptions::default();
    for (n, r, seed) in [(6, 1, 1), (8, 2, 2), (12, 3, 3), (15, 2, 4)] {
        let est = simulated(n, r, seed);
        let delta = 0.5 * delta_max(&est).unwrap().delta_max;
        let res = solve_robust(&est, delta, &DualOptions::default(), &opts).unwrap();
        let dec = &res.decomposition;
        let sol = &res.solution;
        assert!(res.certificate.passed, "n = {n}: {:?}", res.certificate);
        // Lambda = I - X is PSD
        assert!(*lambda_matrix(sol).eigenvalues().unwrap().last().unwrap() >= -1e-10);
        // D diagonal and nonnegative
        let diff = dec.sigma.sub(&dec.r);
        assert!(diff.max_abs_off_diag() <= 1e-6);
        assert!(dec.d.diag().iter().all(|v| *v >= -1e-8), "n = {n}: D = {:?}, gamma = {:?}", dec.d.diag(), sol.gamma.diag());
        // complementary slackness on the diagonal
        let scale = 1.0 + dec.sigma.max_abs();
        for (gi, di) in sol.gamma.diag().iter().zip(dec.d.diag()) {
            assert!(gi.min(di) <= 1e-6 * scale);
        }
        // R = loadings loadings^T
        let aat = dec.loadings.matmul(&dec.loadings.transpose());
        assert!((0..n).all(|i| (0..n).all(|j| (aat[(i, j)] - dec.r.get(i, j)).abs() <= 1e-8 * scale)));
        assert!((2.0 * kl_divergence(&dec.sigma, &est).unwrap() - delta).abs() <= 1e-6);
        assert!(dec.r.eigenvalues().unwrap().last().unwrap() >= &-1e-10);
    }
}

#[test]
fn corrupted_r_fails_certification() {
    let est = estimate(SymMat::from_upper_fn(2, |i, j| if i == j { 1.0 } else { 0.6 }));
    let delta = 0.5 * delta_max(&est).unwrap().delta_max;
    let res = solve_robust(&est, delta, &DualOptions::default(), &RecoveryOptions::default()).unwrap();
    assert!(res.certificate.passed);
    assert!(res.decomposition.system_residual <= 1e-8);
    assert!(res.decomposition.q.as_ref().unwrap().eigenvalues().unwrap().iter().all(|w| *w >= 0.0));
    let mut bad = res.decomposition.clone();
    bad.r = bad.r.add_identity(0.1);
    let cert = certify(&bad, &res.solution, &est, delta, 1e-5).unwrap();
    assert!(!cert.passed);
    assert!(cert.gap > 0.1, "gap {}", cert.gap);
}

#[test]
fn trivial_solution_has_zero_residuals() {
    let mut g = rng(12);
    let est = estimate(random_pd(&mut g, 4));
    let dm = delta_max(&est).unwrap();
    let delta = dm.delta_max * (1.0 - 1e-9);
    let sol = solution_at(1.0, SymMat::zeros(4), &est, delta);
    let mut dec = recover(&sol, &est, &RecoveryOptions::default()).unwrap();
    assert_eq!(dec.rank_r, 0);
    assert_eq!(dec.kernel_dim, 0);
    dec.sigma = dm.sigma_d.clone();
    dec.d = dm.sigma_d.clone();
    let cert = certify(&dec, &sol, &est, delta, 1e-5).unwrap();
    assert_eq!((cert.c1, cert.c2, cert.c3), (0.0, 0.0, 0.0));
    assert!(cert.boundary <= 1e-8);
}

#[test]
fn solution_from_the_solver_matches_a_fresh_recovery() {
    let est = simulated(7, 2, 9);
    let delta = 0.3 * delta_max(&est).unwrap().delta_max;
    let sol = solve_dual(&est, delta, &DualOptions::default()).unwrap();
    let dec = recover(&sol, &est, &RecoveryOptions::default()).unwrap();
    let cert = certify(&dec, &sol, &est, delta, 1e-5).unwrap();
    assert!(cert.passed, "{cert:?}");
    assert!(dec.duality_gap <= 1e-4 * (1.0 + dec.r.trace()));
}
