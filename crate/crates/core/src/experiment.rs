//! Monte Carlo comparison of MTFA on the true covariance, MTFA on the
//! sample covariance, and the KL-robust solution, over a batch of seeds.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::dual::DualOptions;
use crate::error::{Error, Result};
use crate::estimation::{make_tolerance, sample_covariance, SampleCovOptions};
use crate::linalg::SymMat;
use crate::mtfa::{singular_value_report, solve_mtfa, MtfaOptions};
use crate::recovery::{solve_robust, RecoveryOptions};
use crate::simulator::{generate_model, sample_data, FactorModelSpec};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Template; its `seed` is replaced per run.
    pub model: FactorModelSpec,
    pub samples: usize,
    pub delta_fraction: f64,
    pub seeds: Vec<u64>,
    /// Extra fractions of `delta_max` for the robust solve (may be empty).
    pub sweep: Vec<f64>,
    pub report_k: usize,
    pub rank_rel_tol: f64,
    pub mtfa: MtfaOptions,
    pub dual: DualOptions,
    pub recovery: RecoveryOptions,
}

impl ExperimentConfig {
    pub fn new(n: usize, r: usize, samples: usize, seeds: Vec<u64>) -> Self {
        Self {
            model: FactorModelSpec::new(n, r, 0),
            samples,
            delta_fraction: 0.5,
            seeds,
            sweep: Vec::new(),
            report_k: 20,
            rank_rel_tol: 1e-3,
            mtfa: MtfaOptions::default(),
            dual: DualOptions::default(),
            recovery: RecoveryOptions::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.samples == 0 {
            return Err(Error::InvalidParameter("need at least one sample".into()));
        }
        for f in std::iter::once(&self.delta_fraction).chain(&self.sweep) {
            if !(*f > 0.0 && *f < 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "delta fraction must lie in (0, 1), got {f}"
                )));
            }
        }
        if self.report_k == 0 {
            return Err(Error::InvalidParameter("report_k must be positive".into()));
        }
        Ok(())
    }
}

/// Spectrum of one low-rank estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumSummary {
    pub singular_values: Vec<f64>,
    pub rank: usize,
    /// `sigma_{r+1} / sigma_r` with `r` the true number of factors.
    pub ratio: f64,
    pub trace: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn summarize(m: &SymMat, r: usize, k: usize, rel_tol: f64) -> Result<SpectrumSummary> {
    let k = k.min(m.n());
    let singular_values = singular_value_report(m, k)?;
    let all = m.singular_values(m.n())?;
    let ratio = if all[r - 1] > 0.0 {
        all[r] / all[r - 1]
    } else {
        f64::NAN
    };
    Ok(SpectrumSummary {
        singular_values,
        rank: m.numerical_rank(rel_tol)?,
        ratio,
        trace: m.trace(),
        iterations: 0,
        converged: true,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustSummary {
    pub fraction: f64,
    pub delta: f64,
    pub spectrum: SpectrumSummary,
    pub lambda_star: f64,
    pub certified: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub delta_max: Option<f64>,
    pub mtfa_true: Option<SpectrumSummary>,
    pub mtfa_hat: Option<SpectrumSummary>,
    pub robust: Option<RobustSummary>,
    pub sweep: Vec<RobustSummary>,
    /// First error met; later stages of this seed are skipped.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub seeds_ok: usize,
    pub median_ratio_mtfa_true: Option<f64>,
    pub median_ratio_mtfa_hat: Option<f64>,
    pub median_ratio_robust: Option<f64>,
    pub median_rank_mtfa_hat: Option<f64>,
    pub median_rank_robust: Option<f64>,
    /// Share of seeds whose robust solution has exactly `r` factors.
    pub robust_rank_hit_rate: f64,
    /// `(fraction, hit rate)` for each sweep fraction.
    pub sweep_hit_rate: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Timings {
    pub per_seed_ms: Vec<f64>,
    pub total_ms: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub seeds: Vec<SeedReport>,
    pub aggregate: Aggregate,
    pub timings: Timings,
}

fn robust_summary(
    est: &crate::estimation::CovarianceEstimate,
    fraction: f64,
    cfg: &ExperimentConfig,
) -> Result<RobustSummary> {
    let tol = make_tolerance(est, fraction)?;
    let res = solve_robust(est, tol.delta, &cfg.dual, &cfg.recovery)?;
    let mut spectrum = summarize(
        &res.decomposition.r,
        cfg.model.r,
        cfg.report_k,
        cfg.rank_rel_tol,
    )?;
    spectrum.iterations = res.solution.iterations;
    spectrum.converged = res.solution.converged;
    Ok(RobustSummary {
        fraction,
        delta: tol.delta,
        spectrum,
        lambda_star: res.solution.lambda(),
        certified: res.certificate.passed,
    })
}

/// One seed; fills the report up to the first failing stage.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> SeedReport {
    let mut rep = SeedReport {
        seed,
        delta_max: None,
        mtfa_true: None,
        mtfa_hat: None,
        robust: None,
        sweep: Vec::new(),
        error: None,
    };
    if let Err(e) = fill_seed(cfg, seed, &mut rep) {
        warn!("seed {seed}: {e}");
        rep.error = Some(e.to_string());
    }
    rep
}

fn fill_seed(cfg: &ExperimentConfig, seed: u64, rep: &mut SeedReport) -> Result<()> {
    let (r, k, tol) = (cfg.model.r, cfg.report_k, cfg.rank_rel_tol);
    let spec = FactorModelSpec {
        seed,
        ..cfg.model.clone()
    };
    let gt = generate_model(&spec)?;

    let m = solve_mtfa(&gt.sigma, &cfg.mtfa)?;
    let mut s = summarize(&m.r, r, k, tol)?;
    s.iterations = m.iterations;
    s.converged = m.converged;
    rep.mtfa_true = Some(s);

    let data = sample_data(&gt, cfg.samples, seed)?;
    let est = sample_covariance(&data, SampleCovOptions::default())?;
    let m = solve_mtfa(est.sigma_hat(), &cfg.mtfa)?;
    let mut s = summarize(&m.r, r, k, tol)?;
    s.iterations = m.iterations;
    s.converged = m.converged;
    rep.mtfa_hat = Some(s);

    rep.delta_max = Some(make_tolerance(&est, cfg.delta_fraction)?.delta_max);
    rep.robust = Some(robust_summary(&est, cfg.delta_fraction, cfg)?);
    for &f in &cfg.sweep {
        rep.sweep.push(robust_summary(&est, f, cfg)?);
    }
    Ok(())
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    Some(if values.len() % 2 == 1 {
        values[m]
    } else {
        0.5 * (values[m - 1] + values[m])
    })
}

fn aggregate(cfg: &ExperimentConfig, seeds: &[SeedReport]) -> Aggregate {
    let collect = |f: &dyn Fn(&SeedReport) -> Option<f64>| -> Option<f64> {
        let mut v: Vec<f64> = seeds.iter().filter_map(f).filter(|x| !x.is_nan()).collect();
        median(&mut v)
    };
    let total = seeds.len().max(1) as f64;
    let hits = |rs: &dyn Fn(&SeedReport) -> Option<&RobustSummary>| {
        seeds
            .iter()
            .filter_map(rs)
            .filter(|s| s.spectrum.rank == cfg.model.r)
            .count() as f64
            / total
    };
    Aggregate {
        seeds_ok: seeds.iter().filter(|s| s.error.is_none()).count(),
        median_ratio_mtfa_true: collect(&|s| s.mtfa_true.as_ref().map(|x| x.ratio)),
        median_ratio_mtfa_hat: collect(&|s| s.mtfa_hat.as_ref().map(|x| x.ratio)),
        median_ratio_robust: collect(&|s| s.robust.as_ref().map(|x| x.spectrum.ratio)),
        median_rank_mtfa_hat: collect(&|s| s.mtfa_hat.as_ref().map(|x| x.rank as f64)),
        median_rank_robust: collect(&|s| s.robust.as_ref().map(|x| x.spectrum.rank as f64)),
        robust_rank_hit_rate: hits(&|s| s.robust.as_ref()),
        sweep_hit_rate: cfg
            .sweep
            .iter()
            .enumerate()
            .map(|(i, &f)| (f, hits(&|s| s.sweep.get(i))))
            .collect(),
    }
}

/// Runs every seed (on up to `jobs` threads) and assembles the report in
/// seed order, so the result does not depend on scheduling.
pub fn run_experiment(cfg: &ExperimentConfig, jobs: usize) -> Result<ExperimentReport> {
    cfg.validate()?;
    let start = Instant::now();
    let slots: Mutex<Vec<Option<(SeedReport, f64)>>> = Mutex::new(vec![None; cfg.seeds.len()]);
    let next = AtomicUsize::new(0);
    let work = || loop {
        let i = next.fetch_add(1, Ordering::Relaxed);
        let Some(&seed) = cfg.seeds.get(i) else {
            break;
        };
        let t = Instant::now();
        let rep = run_seed(cfg, seed);
        let ms = t.elapsed().as_secs_f64() * 1e3;
        info!("seed {seed} done in {ms:.0} ms");
        slots.lock().expect("no poisoned workers")[i] = Some((rep, ms));
    };
    let jobs = jobs.clamp(1, cfg.seeds.len().max(1));
    if jobs == 1 {
        work();
    } else {
        std::thread::scope(|s| {
            for _ in 0..jobs {
                s.spawn(work);
            }
        });
    }
    let (seeds, per_seed_ms): (Vec<_>, Vec<_>) = slots
        .into_inner()
        .expect("no poisoned workers")
        .into_iter()
        .map(|s| s.expect("every seed ran"))
        .unzip();
    Ok(ExperimentReport {
        aggregate: aggregate(cfg, &seeds),
        config: cfg.clone(),
        seeds,
        timings: Timings {
            per_seed_ms,
            total_ms: start.elapsed().as_secs_f64() * 1e3,
        },
    })
}
