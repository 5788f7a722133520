//! Acceptance suite. Every criterion prints one line:
//!
//!     criterion  N  PASS|FAIL  <title>  <measured values>  [elapsed / budget]
//!
//! Tolerances and time budgets are pinned below. Pass criterion numbers as
//! arguments to run a subset (`cargo test --test acceptance -- 7 9`).

use std::cell::RefCell;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rfa_core::dual::{
    dual_gradient, project_cf, solve_dual, solve_dual_from, DualOptions, DualPoint,
};
use rfa_core::estimation::{
    delta_max, kl_divergence, sample_covariance, CovarianceEstimate, SampleCovOptions,
};
use rfa_core::experiment::{run_experiment, ExperimentConfig};
use rfa_core::mtfa::{singular_value_report, solve_mtfa, MtfaOptions};
use rfa_core::recovery::{solve_robust, RecoveryOptions};
use rfa_core::simulator::{generate_model, sample_data, FactorModelSpec};
use rfa_core::{Mat, SymMat};
use serde_json::Value;

const SECOND: Duration = Duration::from_secs(1);
const MINUTE: Duration = Duration::from_secs(60);

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_sym(g: &mut impl Rng, n: usize) -> SymMat {
    SymMat::from_upper_fn(n, |_, _| g.random_range(-1.0..1.0))
}

fn random_pd(g: &mut impl Rng, n: usize) -> SymMat {
    let a = Mat::from_fn(n, n, |_, _| g.random_range(-1.0..1.0));
    let aat = a.matmul(&a.transpose());
    SymMat::from_upper_fn(n, |i, j| aat[(i, j)] / n as f64).add_identity(0.1)
}

fn estimate(s: SymMat) -> CovarianceEstimate {
    CovarianceEstimate::from_sigma_hat(s, 0).unwrap()
}

fn simulated(n: usize, r: usize, samples: usize, seed: u64) -> CovarianceEstimate {
    let gt = generate_model(&FactorModelSpec::new(n, r, seed)).unwrap();
    let data = sample_data(&gt, samples, seed).unwrap();
    sample_covariance(&data, SampleCovOptions::default()).unwrap()
}

// ---------------------------------------------------------------- 1

fn operator_algebra() -> Verdict {
    let mut g = rng(1);
    let mut worst_adjoint = 0.0_f64;
    let mut exact = true;
    for k in 0..1000 {
        let n = 1 + k % 50;
        let a = random_sym(&mut g, n).scale(10.0);
        let b = random_sym(&mut g, n).scale(10.0);
        let ca = a.chi();
        exact &= ca.chi() == ca;
        exact &= ca.diag().iter().all(|v| *v == 0.0);
        exact &= (0..n).all(|i| (0..n).all(|j| i == j || ca.get(i, j) == a.get(i, j)));
        exact &= a.diag_part().add(&ca) == a;
        exact &= a.diag_part().inner(&b.chi()).unwrap() == 0.0;
        let lhs = ca.inner(&b).unwrap();
        let rhs = a.inner(&b.chi()).unwrap();
        let scale = a.frobenius_norm() * b.frobenius_norm();
        worst_adjoint = worst_adjoint.max((lhs - rhs).abs() / scale.max(1.0));
    }
    verdict(
        exact && worst_adjoint <= 1e-12,
        format!("idempotence/split exact: {exact}, max self-adjointness error {worst_adjoint:.1e} (<= 1e-12)"),
    )
}

// ---------------------------------------------------------------- 2

/// Coordinate Newton on `t_i = log d_i` of the black-box divergence
/// `KL(diag(d) || Sigma_hat)`, derivatives by central differences.
fn diagonal_kl_oracle(est: &CovarianceEstimate) -> (Vec<f64>, f64) {
    let f = |t: &[f64]| {
        let d: Vec<f64> = t.iter().map(|v| v.exp()).collect();
        kl_divergence(&SymMat::from_diag(&d), est).unwrap()
    };
    let mut t: Vec<f64> = est.sigma_hat().diag().iter().map(|v| v.ln()).collect();
    let h = 1e-4;
    for _ in 0..30 {
        let mut moved = 0.0_f64;
        for i in 0..t.len() {
            for _ in 0..20 {
                let (mut tp, mut tm) = (t.clone(), t.clone());
                tp[i] += h;
                tm[i] -= h;
                let (fp, f0, fm) = (f(&tp), f(&t), f(&tm));
                let grad = (fp - fm) / (2.0 * h);
                let curv = (fp - 2.0 * f0 + fm) / (h * h);
                let step = if curv > 0.0 { -grad / curv } else { -grad.signum() * 0.1 };
                let step = step.clamp(-1.0, 1.0);
                t[i] += step;
                moved = moved.max(step.abs());
                if step.abs() < 1e-12 {
                    break;
                }
            }
        }
        if moved < 1e-11 {
            break;
        }
    }
    let m = f(&t);
    (t.iter().map(|v| v.exp()).collect(), m)
}

fn delta_max_oracle() -> Verdict {
    let mut g = rng(2);
    let (mut worst_value, mut worst_arg) = (0.0_f64, 0.0_f64);
    for k in 0..100 {
        let est = estimate(random_pd(&mut g, 1 + k % 8));
        let dm = delta_max(&est).unwrap();
        let (argmin, min) = diagonal_kl_oracle(&est);
        worst_value = worst_value.max((dm.delta_max - 2.0 * min).abs());
        for (a, b) in dm.sigma_d.diag().iter().zip(&argmin) {
            worst_arg = worst_arg.max((a - b).abs());
        }
    }
    verdict(
        worst_value <= 1e-6 && worst_arg <= 1e-6,
        format!("max |delta_max - 2 min KL| {worst_value:.1e}, max argmin error {worst_arg:.1e} (<= 1e-6)"),
    )
}

// ---------------------------------------------------------------- 3

fn f_direct(lambda: f64, x: &SymMat, est: &CovarianceEstimate, delta: f64) -> f64 {
    let w = est.sigma_hat_inv().axpy(1.0 / lambda, x);
    -lambda * (w.logdet_pd().unwrap() + est.sigma_hat().logdet_pd().unwrap() - delta)
}

fn gradient_check() -> Verdict {
    let mut g = rng(3);
    let h = 1e-5;
    let mut worst = 0.0_f64;
    for k in 0..50 {
        let n = 2 + k % 7;
        let est = estimate(random_pd(&mut g, n));
        let delta = 0.5 * delta_max(&est).unwrap().delta_max;
        let lambda = g.random_range(0.2..3.0);
        let mut x = project_cf(&random_sym(&mut g, n).scale(2.0)).unwrap().scale(0.9);
        let floor = 0.5 * *est.sigma_hat_inv().eigenvalues().unwrap().last().unwrap();
        while *est.sigma_hat_inv().axpy(1.0 / lambda, &x).eigenvalues().unwrap().last().unwrap() <= floor {
            x = x.scale(0.5);
        }
        let p = DualPoint::new(lambda, x.clone(), &est).unwrap();
        let grad = dual_gradient(&p, &est, delta).unwrap();
        let mut analytic = vec![grad.d_lambda];
        let mut numeric = vec![
            (f_direct(lambda + h, &x, &est, delta) - f_direct(lambda - h, &x, &est, delta)) / (2.0 * h),
        ];
        for i in 0..n {
            for j in i..n {
                let mut e = SymMat::zeros(n);
                e.set(i, j, 1.0);
                analytic.push(grad.d_x.inner(&e).unwrap());
                numeric.push(
                    (f_direct(lambda, &x.axpy(h, &e), &est, delta)
                        - f_direct(lambda, &x.axpy(-h, &e), &est, delta))
                        / (2.0 * h),
                );
            }
        }
        let err: f64 = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
        worst = worst.max(err / norm);
    }
    verdict(worst <= 1e-5, format!("max relative error {worst:.1e} over 50 points (<= 1e-5)"))
}

// ---------------------------------------------------------------- 4, 5

struct InstanceResult {
    gap: f64,
    c: [f64; 3],
    boundary: f64,
}

/// 20 instances with 3 <= n <= 20: factor-model sample covariances and
/// generic positive definite matrices, alternately.
fn robust_instances() -> Vec<Result<InstanceResult, String>> {
    let mut g = rng(4);
    (0..20u64)
        .map(|k| {
            let n = 3 + ((k * 7) % 18) as usize;
            let est = if k % 2 == 0 {
                simulated(n, 1 + n / 6, 10 * n, k)
            } else {
                estimate(random_pd(&mut g, n))
            };
            let delta = 0.5 * delta_max(&est).map_err(|e| e.to_string())?.delta_max;
            let res = solve_robust(&est, delta, &DualOptions::default(), &RecoveryOptions::default())
                .map_err(|e| format!("n = {n}: {e}"))?;
            let dec = &res.decomposition;
            let kl = kl_divergence(&dec.sigma, &est).map_err(|e| e.to_string())?;
            Ok(InstanceResult {
                gap: dec.duality_gap / (1.0 + dec.r.trace()),
                c: [res.certificate.c1, res.certificate.c2, res.certificate.c3],
                boundary: (2.0 * kl - delta).abs(),
            })
        })
        .collect()
}

fn zero_gap(results: &[Result<InstanceResult, String>]) -> Verdict {
    let errors: Vec<&String> = results.iter().filter_map(|r| r.as_ref().err()).collect();
    let worst = results.iter().flatten().map(|r| r.gap).fold(0.0, f64::max);
    verdict(
        errors.is_empty() && worst <= 1e-4,
        format!("max |tr R - J| / (1 + tr R) = {worst:.1e} (<= 1e-4), failures: {errors:?}"),
    )
}

fn kkt(results: &[Result<InstanceResult, String>]) -> Verdict {
    let ok: Vec<&InstanceResult> = results.iter().flatten().collect();
    let c = ok.iter().flat_map(|r| r.c).fold(0.0, f64::max);
    let b = ok.iter().map(|r| r.boundary).fold(0.0, f64::max);
    verdict(
        ok.len() == results.len() && c <= 1e-5 && b <= 1e-6,
        format!("max normalized c1..c3 {c:.1e} (<= 1e-5), max boundary {b:.1e} (<= 1e-6), {}/{} solved", ok.len(), results.len()),
    )
}

// ---------------------------------------------------------------- 6

fn mtfa_baseline() -> Verdict {
    let opts = MtfaOptions::default();
    let diag = SymMat::from_diag(&[1.0, 2.5, 0.3, 4.0]);
    let a = solve_mtfa(&diag, &opts).unwrap();
    let part_a = a.r.max_abs() <= 1e-7 * diag.max_abs();

    let s = SymMat::from_upper_fn(2, |i, j| if i == j { 2.0 } else { 1.0 });
    let b = solve_mtfa(&s, &opts).unwrap();
    let part_b = (b.trace_r - 2.0).abs() <= 1e-6;

    // Sigma = a a^T + D0 with the certificate Lambda = S P S (P projects onto
    // b-perp, S normalizes the diagonal) and a = S^{-1} b in its kernel
    let mut g = rng(6);
    let mut part_c = true;
    for _ in 0..10 {
        let n = 5;
        let bv: Vec<f64> = (0..n).map(|_| g.random_range(0.3..1.5) * if g.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
        let bb: f64 = bv.iter().map(|v| v * v).sum();
        let sc: Vec<f64> = bv.iter().map(|v| 1.0 / (1.0 - v * v / bb).sqrt()).collect();
        let lambda = SymMat::from_upper_fn(n, |i, j| sc[i] * (if i == j { 1.0 } else { 0.0 } - bv[i] * bv[j] / bb) * sc[j]);
        let av: Vec<f64> = bv.iter().zip(&sc).map(|(v, s)| v / s).collect();
        let certified = *lambda.eigenvalues().unwrap().last().unwrap() >= -1e-12
            && lambda.matvec(&av).iter().all(|v| v.abs() <= 1e-12)
            && lambda.diag().iter().all(|v| (v - 1.0).abs() <= 1e-12);
        if !certified {
            continue;
        }
        let d0: Vec<f64> = (0..n).map(|_| g.random_range(0.2..1.0)).collect();
        let sigma = SymMat::from_upper_fn(n, |i, j| av[i] * av[j]).add_diag(&d0);
        let sol = solve_mtfa(&sigma, &opts).unwrap();
        let norm_a: f64 = av.iter().map(|v| v * v).sum();
        part_c &= sol.r.numerical_rank(1e-3).unwrap() == 1 && (sol.trace_r - norm_a).abs() <= 1e-6 * norm_a;
    }

    let mut worst_scale = 0.0_f64;
    for seed in 0..5 {
        let gt = generate_model(&FactorModelSpec::new(12, 3, seed)).unwrap();
        let x = solve_mtfa(&gt.sigma, &opts).unwrap();
        let y = solve_mtfa(&gt.sigma.scale(10.0), &opts).unwrap();
        let denom = 10.0 * gt.sigma.max_abs();
        worst_scale = worst_scale
            .max(y.r.sub(&x.r.scale(10.0)).max_abs() / denom)
            .max(y.d.sub(&x.d.scale(10.0)).max_abs() / denom);
    }
    verdict(
        part_a && part_b && part_c && worst_scale <= 1e-6,
        format!(
            "(a) diagonal -> R = 0: {part_a}; (b) tr R = {:.9} (2 +- 1e-6): {part_b}; (c) certified rank-1: {part_c}; scale equivariance {worst_scale:.1e} (<= 1e-6)",
            b.trace_r
        ),
    )
}

// ---------------------------------------------------------------- 7

fn consistency_limit() -> Verdict {
    let mut finals = Vec::new();
    let mut monotone = true;
    let mut rates = Vec::new();
    for seed in 0..5u64 {
        let n = 6 + 2 * seed as usize;
        let est = simulated(n, 2, 10 * n, seed);
        let mtfa = solve_mtfa(est.sigma_hat(), &MtfaOptions::default()).unwrap().trace_r;
        let dm = delta_max(&est).unwrap().delta_max;
        let mut gaps = Vec::new();
        for k in 1..=6 {
            let delta = dm * 2f64.powi(-k);
            match solve_robust(&est, delta, &DualOptions::default(), &RecoveryOptions::default()) {
                Ok(res) => gaps.push((res.decomposition.r.trace() - mtfa).abs() / mtfa),
                Err(e) => return verdict(false, format!("seed {seed}, k = {k}: {e}")),
            }
        }
        monotone &= gaps.windows(2).all(|w| w[1] <= w[0]);
        rates.push(gaps[5] / gaps[4]);
        finals.push(gaps[5]);
    }
    let worst = finals.iter().cloned().fold(0.0, f64::max);
    let rate = rates.iter().sum::<f64>() / rates.len() as f64;
    verdict(
        worst <= 1e-3,
        format!(
            "final |tr R_delta - tr R_mtfa| / tr R_mtfa max {worst:.2e} (<= 1e-3); monotone: {monotone}; gap ratio per halving {rate:.3} (sqrt(1/2) = 0.707)"
        ),
    )
}

// ---------------------------------------------------------------- 8

fn experiment_true_covariance() -> Verdict {
    let mut worst = 0.0_f64;
    for seed in 0..20u64 {
        let gt = generate_model(&FactorModelSpec::new(50, 4, seed)).unwrap();
        let sol = solve_mtfa(&gt.sigma, &MtfaOptions::default()).unwrap();
        if !sol.converged {
            return verdict(false, format!("seed {seed}: MTFA did not converge"));
        }
        let sv = singular_value_report(&sol.r, 5).unwrap();
        worst = worst.max(sv[4] / sv[3]);
    }
    verdict(worst <= 1e-4, format!("max sigma5/sigma4 over 20 seeds {worst:.1e} (<= 1e-4)"))
}

// ---------------------------------------------------------------- 9

fn experiment_sample_covariance() -> Verdict {
    let mut cfg = ExperimentConfig::new(50, 4, 1000, (0..20).collect());
    cfg.sweep = Vec::new();
    let report = match run_experiment(&cfg, 1) {
        Ok(r) => r,
        Err(e) => return verdict(false, e.to_string()),
    };
    let agg = &report.aggregate;
    let ratio = agg.median_ratio_mtfa_hat.unwrap_or(f64::NAN);
    let hits = agg.robust_rank_hit_rate;
    let ranks: Vec<String> = report
        .seeds
        .iter()
        .map(|s| s.robust.as_ref().map_or("err".into(), |r| r.spectrum.rank.to_string()))
        .collect();
    verdict(
        ratio >= 0.05 && hits >= 0.7 && agg.seeds_ok == 20,
        format!(
            "median sigma5/sigma4 of MTFA(Sigma_hat) {ratio:.3e} (>= 0.05); robust rank-4 rate {:.0}% (>= 70%); robust ranks {}; seeds ok {}",
            100.0 * hits,
            ranks.join(","),
            agg.seeds_ok
        ),
    )
}

// ---------------------------------------------------------------- 10

fn restart_stability() -> Verdict {
    let est = simulated(50, 4, 1000, 0);
    let delta = 0.5 * delta_max(&est).unwrap().delta_max;
    let opts = DualOptions::default();
    let base = solve_dual(&est, delta, &opts).unwrap();
    let mut g = rng(10);
    let (mut worst_l, mut worst_x) = (0.0_f64, 0.0_f64);
    for _ in 0..5 {
        let lambda0 = g.random_range(0.3..3.0);
        let mut x0 = project_cf(&random_sym(&mut g, 50).scale(0.3)).unwrap();
        while DualPoint::new(lambda0, x0.clone(), &est).is_err() {
            x0 = x0.scale(0.5);
        }
        let sol = solve_dual_from(&est, delta, &opts, lambda0, &x0).unwrap();
        worst_l = worst_l.max((sol.lambda() - base.lambda()).abs() / base.lambda());
        worst_x = worst_x.max(sol.x().sub(base.x()).frobenius_norm() / base.x().frobenius_norm().max(1.0));
    }
    verdict(
        worst_l <= 1e-5 && worst_x <= 1e-5,
        format!("max relative deviation: lambda {worst_l:.1e}, X {worst_x:.1e} (<= 1e-5)"),
    )
}

// ---------------------------------------------------------------- 11

fn simulate_once(dir: &Path, jobs: &str) -> Result<(String, Vec<(String, Vec<u8>)>), String> {
    let out = dir.join("report.json");
    let status = Command::new(env!("CARGO_BIN_EXE_rfa"))
        .args([
            "simulate", "--n", "20", "--r", "3", "--N", "400", "--seeds", "0..4",
            "--sweep", "0.3,0.7", "--jobs", jobs, "--out",
        ])
        .arg(&out)
        .env_remove("RF_LOG")
        .status()
        .map_err(|e| e.to_string())?;
    if !status.success() {
        return Err(format!("simulate exited with {status}"));
    }
    let mut v: Value = serde_json::from_str(&fs::read_to_string(&out).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    v.as_object_mut().ok_or("report is not an object")?.remove("timings");
    let mut spectra = Vec::new();
    let mut entries: Vec<_> = fs::read_dir(dir.join("report.spectra"))
        .map_err(|e| e.to_string())?
        .map(|e| e.unwrap().path())
        .collect();
    entries.sort();
    for p in entries {
        spectra.push((p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()));
    }
    Ok((serde_json::to_string(&v).unwrap(), spectra))
}

fn determinism() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let runs: Vec<_> = ["1", "1", "3"]
        .iter()
        .enumerate()
        .map(|(i, jobs)| {
            let d = tmp.path().join(format!("run{i}"));
            fs::create_dir(&d).unwrap();
            simulate_once(&d, jobs)
        })
        .collect();
    if let Some(Err(e)) = runs.iter().find(|r| r.is_err()) {
        return verdict(false, e.clone());
    }
    let runs: Vec<_> = runs.into_iter().map(Result::unwrap).collect();
    let same_twice = runs[0] == runs[1];
    let same_jobs = runs[0] == runs[2];
    verdict(
        same_twice && same_jobs,
        format!(
            "JSON minus timings and {} spectra CSVs identical: twice {same_twice}, with --jobs 3 {same_jobs}",
            runs[0].1.len()
        ),
    )
}

// ----------------------------------------------------------------

fn main() {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let selected = |id: u32| wanted.is_empty() || wanted.contains(&id);
    let mut failed = Vec::new();
    let mut run = |id: u32, title: &str, budget: Duration, f: &mut dyn FnMut() -> Verdict| {
        if !selected(id) {
            return;
        }
        let start = Instant::now();
        let v = f();
        let elapsed = start.elapsed();
        let pass = v.pass && elapsed <= budget;
        println!(
            "criterion {id:>2}  {}  {title}: {}  [{:.1?} / {:?}]",
            if pass { "PASS" } else { "FAIL" },
            v.detail,
            elapsed,
            budget
        );
        if !pass {
            failed.push(id);
        }
    };

    run(1, "operator algebra", 5 * SECOND, &mut operator_algebra);
    run(2, "delta_max oracle", MINUTE, &mut delta_max_oracle);
    run(3, "dual gradient", 30 * SECOND, &mut gradient_check);
    // criteria 4 and 5 share the 20 solves; the budget of 4 covers them
    let instances = RefCell::new(None);
    let solve = || {
        instances.borrow_mut().get_or_insert_with(robust_instances);
    };
    run(4, "zero duality gap", 5 * MINUTE, &mut || {
        solve();
        zero_gap(instances.borrow().as_ref().unwrap())
    });
    run(5, "KKT certification", 5 * MINUTE, &mut || {
        solve();
        kkt(instances.borrow().as_ref().unwrap())
    });
    run(6, "MTFA baseline", MINUTE, &mut mtfa_baseline);
    run(7, "delta -> 0 consistency", 5 * MINUTE, &mut consistency_limit);
    run(8, "n = 50 experiment, true covariance", 2 * MINUTE, &mut experiment_true_covariance);
    run(9, "n = 50 experiment, sample covariance", 30 * MINUTE, &mut experiment_sample_covariance);
    run(10, "restart stability", 2 * MINUTE, &mut restart_stability);
    run(11, "simulate determinism", 5 * MINUTE, &mut determinism);

    if failed.is_empty() {
        println!("acceptance: all selected criteria pass");
    } else {
        println!("acceptance: FAILED criteria {failed:?}");
        std::process::exit(1);
    }
}
