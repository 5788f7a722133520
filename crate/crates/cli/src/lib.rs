//! Argument parsing and command execution for the `rfa` binary.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde::Serialize;
use serde_json::Value;

use rfa_core::dual::{DualOptions, StepRule};
use rfa_core::estimation::{
    absolute_tolerance, delta_max, make_tolerance, sample_covariance, CovarianceEstimate,
    SampleCovOptions,
};
use rfa_core::experiment::{run_experiment, ExperimentConfig};
use rfa_core::io::{
    defaults_table, format_f64, read_data_csv, read_symmetric_csv, write_atomic, write_json,
    write_symmetric_csv,
};
use rfa_core::mtfa::{singular_value_report, solve_mtfa, MtfaOptions};
use rfa_core::recovery::{certify, recover, RecoveryOptions, RobustResult};
use rfa_core::report::{DeltaMaxReport, MtfaReport, RobustReport, Timings};
use rfa_core::simulator::FactorModelSpec;
use rfa_core::{dual, Error};

pub const EXIT_OK: i32 = 0;
pub const EXIT_SOLVER: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Debug, Parser, Serialize)]
#[command(
    name = "rfa",
    version,
    about = "Factor analysis with a Kullback-Leibler uncertainty ball around the sample covariance",
    after_help = "Log level: set RF_LOG (error, warn, info, debug, trace)."
)]
pub struct Cli {
    /// Print every default tolerance and exit.
    #[arg(long)]
    pub print_defaults: bool,

    /// Raise log verbosity (repeatable); RF_LOG takes precedence.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Closed-form tolerance ceiling of a sample covariance.
    DeltaMax(DeltaMaxArgs),
    /// Minimum-trace factor analysis of a covariance matrix.
    Mtfa(MtfaArgs),
    /// Factor analysis over the KL ball around the sample covariance.
    Robust(RobustArgs),
    /// Monte Carlo comparison on synthetic factor models.
    Simulate(SimulateArgs),
    /// Summarize a `simulate` report.
    Report(ReportArgs),
}

#[derive(Debug, Args, Serialize)]
#[group(id = "source", required = true, multiple = false)]
pub struct Source {
    /// Data CSV: one observation per row, one variable per column.
    #[arg(long, group = "source", value_parser = existing_file)]
    pub input: Option<PathBuf>,
    /// Sample covariance CSV (square, symmetric).
    #[arg(long, group = "source", value_parser = existing_file)]
    pub sigma_hat: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct EstimatorArgs {
    /// Number of samples behind --sigma-hat (informational; 0 = unknown).
    #[arg(long, default_value_t = 0)]
    pub samples: usize,
    /// Subtract the sample mean before estimating.
    #[arg(long)]
    pub center: bool,
    /// Normalize by N - 1 instead of N.
    #[arg(long)]
    pub unbiased: bool,
    /// Add this multiple of the identity to the estimate.
    #[arg(long, default_value_t = 0.0)]
    pub ridge: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct DeltaMaxArgs {
    #[command(flatten)]
    pub source: Source,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
    /// Write the JSON result here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct MtfaArgs {
    /// Covariance CSV (square, symmetric).
    #[arg(long, value_parser = existing_file)]
    pub input: PathBuf,
    /// Residual tolerance relative to ||Sigma||_F.
    #[arg(long, default_value_t = MtfaOptions::default().tol)]
    pub tol: f64,
    #[arg(long, default_value_t = MtfaOptions::default().max_iter)]
    pub max_iter: usize,
    /// Number of singular values to report (capped at the dimension).
    #[arg(long, default_value_t = 20)]
    pub report_k: usize,
    /// Relative cut for the reported numerical rank.
    #[arg(long, default_value_t = RecoveryOptions::default().rank_rel_tol)]
    pub rank_tol: f64,
    /// Write the JSON result here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Directory for R.csv, D.csv and result.json.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepRuleArg {
    Joint,
    Blockwise,
}

#[derive(Debug, Args, Serialize)]
#[group(id = "radius", required = true, multiple = false)]
pub struct Radius {
    /// Absolute KL tolerance, 0 < delta < delta_max.
    #[arg(long, group = "radius")]
    pub delta: Option<f64>,
    /// Tolerance as a fraction of delta_max, in (0, 1).
    #[arg(long, group = "radius")]
    pub delta_fraction: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct RobustArgs {
    #[command(flatten)]
    pub source: Source,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
    #[command(flatten)]
    pub radius: Radius,
    /// Dual stopping tolerance, relative to 1 + |F|.
    #[arg(long, default_value_t = DualOptions::default().tol)]
    pub tol: f64,
    #[arg(long, default_value_t = DualOptions::default().max_iter)]
    pub max_iter: usize,
    #[arg(long, value_enum, default_value_t = StepRuleArg::Blockwise)]
    pub step_rule: StepRuleArg,
    /// Kernel cut for Lambda, relative to its norm.
    #[arg(long, default_value_t = RecoveryOptions::default().kernel_rel_tol)]
    pub kernel_tol: f64,
    /// Relative cut for the reported numerical rank of R.
    #[arg(long, default_value_t = RecoveryOptions::default().rank_rel_tol)]
    pub rank_tol: f64,
    /// Write the per-iteration trace as CSV.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Write the JSON result here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Directory for the recovered matrices (CSV) and result.json.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 50)]
    pub n: usize,
    #[arg(long, default_value_t = 4)]
    pub r: usize,
    /// Samples per data set.
    #[arg(long = "N", default_value_t = 1000)]
    pub samples: usize,
    /// Seeds: inclusive range `a..b` or a comma list.
    #[arg(long, default_value = "0..19", value_parser = parse_seeds)]
    pub seeds: SeedList,
    #[arg(long, default_value_t = 0.5)]
    pub delta_fraction: f64,
    /// Extra delta fractions to sweep (comma list; empty to skip).
    #[arg(long, default_value = "0.1,0.3,0.5,0.7,0.9", value_parser = parse_fractions)]
    pub sweep: FractionList,
    #[arg(long, default_value_t = 1.0)]
    pub loading_scale: f64,
    #[arg(long, default_value_t = 0.1)]
    pub noise_lo: f64,
    #[arg(long, default_value_t = 1.0)]
    pub noise_hi: f64,
    #[arg(long, default_value_t = 20)]
    pub report_k: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub rank_tol: f64,
    /// Worker threads over seeds.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// JSON report path (stdout if absent). Per-seed spectra CSVs go to
    /// `<out stem>.spectra/`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct ReportArgs {
    /// Report JSON written by `simulate`.
    #[arg(long, value_parser = existing_file)]
    pub input: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedList(pub Vec<u64>);

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FractionList(pub Vec<f64>);

fn existing_file(s: &str) -> Result<PathBuf, String> {
    let p = PathBuf::from(s);
    if p.is_file() {
        Ok(p)
    } else {
        Err(format!("file {s:?} does not exist"))
    }
}

pub fn parse_seeds(s: &str) -> Result<SeedList, String> {
    let s = s.trim();
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|e| format!("bad seed {a:?}: {e}"))?;
        let b: u64 = b.trim().parse().map_err(|e| format!("bad seed {b:?}: {e}"))?;
        if a > b {
            return Err(format!("empty seed range {s}"));
        }
        return Ok(SeedList((a..=b).collect()));
    }
    let seeds = s
        .split(',')
        .map(|t| t.trim().parse().map_err(|e| format!("bad seed {t:?}: {e}")))
        .collect::<Result<Vec<u64>, String>>()?;
    Ok(SeedList(seeds))
}

pub fn parse_fractions(s: &str) -> Result<FractionList, String> {
    if s.trim().is_empty() {
        return Ok(FractionList(Vec::new()));
    }
    s.split(',')
        .map(|t| {
            let f: f64 = t.trim().parse().map_err(|e| format!("bad fraction {t:?}: {e}"))?;
            if f > 0.0 && f < 1.0 {
                Ok(f)
            } else {
                Err(format!("fraction {f} is outside (0, 1)"))
            }
        })
        .collect::<Result<Vec<_>, _>>()
        .map(FractionList)
}

/// Parses `argv` (including the program name).
pub fn parse_args<I, T>(argv: I) -> Result<Cli, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    Cli::try_parse_from(argv)
}

/// A failure with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io(_) | Error::Parse { .. } | Error::Asymmetry { .. } => EXIT_IO,
            Error::InvalidParameter(_) => EXIT_USAGE,
            _ => EXIT_SOLVER,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_USAGE,
        message: message.into(),
    }
}

type Outcome = Result<(), Failure>;

/// Runs a parsed command line, writing human output to `stdout`.
pub fn run(cli: &Cli, stdout: &mut dyn std::io::Write) -> Outcome {
    if cli.print_defaults {
        return print_defaults(stdout);
    }
    let Some(command) = &cli.command else {
        return Err(usage("no command given; see --help"));
    };
    let echo = serde_json::to_value(command).unwrap_or(Value::Null);
    match command {
        Command::DeltaMax(a) => run_delta_max(a, stdout),
        Command::Mtfa(a) => run_mtfa(a, echo, stdout),
        Command::Robust(a) => run_robust(a, echo, stdout),
        Command::Simulate(a) => run_simulate(a, stdout),
        Command::Report(a) => run_report(a, stdout),
    }
}

fn io_fail(e: std::io::Error) -> Failure {
    Error::from(e).into()
}

fn print_defaults(out: &mut dyn std::io::Write) -> Outcome {
    let table = defaults_table();
    let width = table.iter().map(|e| e.name.len()).max().unwrap_or(0);
    for e in table {
        writeln!(out, "{:width$}  {:>8}  {}", e.name, e.value, e.meaning).map_err(io_fail)?;
    }
    Ok(())
}

fn emit<T: Serialize>(value: &T, path: Option<&Path>, out: &mut dyn std::io::Write) -> Outcome {
    match path {
        Some(p) => write_json(p, value).map_err(Failure::from),
        None => {
            let text = serde_json::to_string_pretty(value)
                .map_err(|e| Failure::from(Error::Io(e.to_string())))?;
            writeln!(out, "{text}").map_err(io_fail)
        }
    }
}

fn load_estimate(source: &Source, est: &EstimatorArgs) -> Result<CovarianceEstimate, Failure> {
    if let Some(path) = &source.input {
        let data = read_data_csv(path)?;
        let opts = SampleCovOptions {
            center: est.center,
            unbiased: est.unbiased,
            ridge: est.ridge,
        };
        return Ok(sample_covariance(&data, opts)?);
    }
    let path = source.sigma_hat.as_ref().expect("clap enforces one source");
    let mut s = read_symmetric_csv(path)?;
    if est.ridge > 0.0 {
        s = s.add_identity(est.ridge);
    }
    Ok(CovarianceEstimate::from_sigma_hat(s, est.samples)?)
}

fn run_delta_max(a: &DeltaMaxArgs, out: &mut dyn std::io::Write) -> Outcome {
    let est = load_estimate(&a.source, &a.estimator)?;
    let dm = delta_max(&est)?;
    emit(&DeltaMaxReport::new(&dm, est.samples()), a.out.as_deref(), out)
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

fn run_mtfa(a: &MtfaArgs, echo: Value, out: &mut dyn std::io::Write) -> Outcome {
    let start = Instant::now();
    let sigma = read_symmetric_csv(&a.input)?;
    if a.report_k == 0 {
        return Err(usage("--report-k must be positive"));
    }
    let opts = MtfaOptions {
        tol: a.tol,
        max_iter: a.max_iter,
        ..MtfaOptions::default()
    };
    let sol = solve_mtfa(&sigma, &opts)?;
    let solve_ms = ms(start);
    // at most n values exist
    let sv = singular_value_report(&sol.r, a.report_k.min(sigma.n()))?;
    let rank = sol.r.numerical_rank(a.rank_tol)?;
    let report = MtfaReport::new(
        &sol,
        sv,
        rank,
        opts.cert_tol,
        echo,
        Timings {
            solve_ms,
            recovery_ms: 0.0,
            total_ms: ms(start),
        },
    );
    if let Some(dir) = &a.output {
        std::fs::create_dir_all(dir).map_err(io_fail)?;
        write_symmetric_csv(&dir.join("R.csv"), &sol.r)?;
        write_symmetric_csv(&dir.join("D.csv"), &sol.d)?;
        write_json(&dir.join("result.json"), &report)?;
    }
    emit(&report, a.out.as_deref(), out)?;
    if !sol.converged {
        return Err(Error::MaxIterations {
            solver: "mtfa",
            iterations: sol.iterations,
            residual: sol.primal_residual.max(sol.dual_residual),
        }
        .into());
    }
    Ok(())
}

fn run_robust(a: &RobustArgs, echo: Value, out: &mut dyn std::io::Write) -> Outcome {
    let start = Instant::now();
    let est = load_estimate(&a.source, &a.estimator)?;
    let tol = match (a.radius.delta, a.radius.delta_fraction) {
        (Some(d), None) => absolute_tolerance(&est, d)?,
        (None, Some(f)) => make_tolerance(&est, f)?,
        _ => return Err(usage("give exactly one of --delta and --delta-fraction")),
    };
    let dual_opts = DualOptions {
        tol: a.tol,
        max_iter: a.max_iter,
        step_rule: match a.step_rule {
            StepRuleArg::Joint => StepRule::Joint,
            StepRuleArg::Blockwise => StepRule::Blockwise,
        },
        record_trace: a.trace.is_some(),
        ..DualOptions::default()
    };
    let rec_opts = RecoveryOptions {
        kernel_rel_tol: a.kernel_tol,
        rank_rel_tol: a.rank_tol,
        ..RecoveryOptions::default()
    };
    info!("delta = {:e} (delta_max = {:e})", tol.delta, tol.delta_max);
    let solution = dual::solve_dual(&est, tol.delta, &dual_opts)?;
    let solve_ms = ms(start);
    if let Some(path) = &a.trace {
        let mut text = String::from("iteration,objective,lambda,residual,step\n");
        for row in &solution.trace {
            let _ = writeln!(
                text,
                "{},{},{},{},{}",
                row.iteration,
                format_f64(row.objective),
                format_f64(row.lambda),
                format_f64(row.residual),
                format_f64(row.step)
            );
        }
        write_atomic(path, text.as_bytes())?;
    }
    let t = Instant::now();
    let decomposition = recover(&solution, &est, &rec_opts)?;
    let certificate = certify(&decomposition, &solution, &est, tol.delta, rec_opts.cert_tol)?;
    let recovery_ms = ms(t);
    let result = RobustResult {
        solution,
        decomposition,
        certificate,
    };
    let report = RobustReport::new(
        &result,
        tol.delta_max,
        echo,
        Timings {
            solve_ms,
            recovery_ms,
            total_ms: ms(start),
        },
    );
    if let Some(dir) = &a.output {
        std::fs::create_dir_all(dir).map_err(io_fail)?;
        let dec = &result.decomposition;
        write_symmetric_csv(&dir.join("sigma_star.csv"), &dec.sigma)?;
        write_symmetric_csv(&dir.join("R.csv"), &dec.r)?;
        write_symmetric_csv(&dir.join("D.csv"), &dec.d)?;
        write_symmetric_csv(&dir.join("X.csv"), result.solution.x())?;
        write_json(&dir.join("result.json"), &report)?;
    }
    emit(&report, a.out.as_deref(), out)?;
    if !result.solution.converged {
        return Err(Error::MaxIterations {
            solver: "dual",
            iterations: result.solution.iterations,
            residual: result.solution.grad_norm,
        }
        .into());
    }
    if !result.certificate.passed {
        return Err(Failure {
            code: EXIT_SOLVER,
            message: "recovered decomposition failed certification; see the report".into(),
        });
    }
    Ok(())
}

/// Experiment report without the wall-clock timings, which are the only
/// nondeterministic part.
#[derive(Serialize)]
struct DeterministicView<'a> {
    version: &'a str,
    config: &'a ExperimentConfig,
    seeds: &'a [rfa_core::experiment::SeedReport],
    aggregate: &'a rfa_core::experiment::Aggregate,
}

#[derive(Serialize)]
struct SimulateDocument<'a> {
    #[serde(flatten)]
    body: DeterministicView<'a>,
    timings: &'a rfa_core::experiment::Timings,
}

fn spectra_csv(rep: &rfa_core::experiment::SeedReport) -> String {
    let mut cols: Vec<(String, &[f64])> = Vec::new();
    if let Some(s) = &rep.mtfa_true {
        cols.push(("mtfa_true".into(), &s.singular_values));
    }
    if let Some(s) = &rep.mtfa_hat {
        cols.push(("mtfa_hat".into(), &s.singular_values));
    }
    if let Some(s) = &rep.robust {
        cols.push((format!("robust_{}", s.fraction), &s.spectrum.singular_values));
    }
    for s in &rep.sweep {
        cols.push((format!("sweep_{}", s.fraction), &s.spectrum.singular_values));
    }
    let mut text = String::from("index");
    for (name, _) in &cols {
        text.push(',');
        text.push_str(name);
    }
    text.push('\n');
    let len = cols.iter().map(|(_, v)| v.len()).max().unwrap_or(0);
    for i in 0..len {
        text.push_str(&(i + 1).to_string());
        for (_, v) in &cols {
            text.push(',');
            if let Some(x) = v.get(i) {
                text.push_str(&format_f64(*x));
            }
        }
        text.push('\n');
    }
    text
}

fn run_simulate(a: &SimulateArgs, out: &mut dyn std::io::Write) -> Outcome {
    if a.seeds.0.is_empty() {
        return Err(usage("no seeds given"));
    }
    let mut cfg = ExperimentConfig::new(a.n, a.r, a.samples, a.seeds.0.clone());
    cfg.model = FactorModelSpec {
        n: a.n,
        r: a.r,
        loading_scale: a.loading_scale,
        noise_range: (a.noise_lo, a.noise_hi),
        seed: 0,
    };
    cfg.delta_fraction = a.delta_fraction;
    cfg.sweep = a.sweep.0.clone();
    cfg.report_k = a.report_k;
    cfg.rank_rel_tol = a.rank_tol;
    let report = run_experiment(&cfg, a.jobs)?;
    let doc = SimulateDocument {
        body: DeterministicView {
            version: rfa_core::report::RESULT_VERSION,
            config: &report.config,
            seeds: &report.seeds,
            aggregate: &report.aggregate,
        },
        timings: &report.timings,
    };
    if let Some(path) = &a.out {
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "report".into());
        let dir = path.with_file_name(format!("{stem}.spectra"));
        std::fs::create_dir_all(&dir).map_err(io_fail)?;
        for rep in &report.seeds {
            write_atomic(
                &dir.join(format!("seed_{}.csv", rep.seed)),
                spectra_csv(rep).as_bytes(),
            )?;
        }
    }
    emit(&doc, a.out.as_deref(), out)?;
    let failed: Vec<u64> = report
        .seeds
        .iter()
        .filter(|s| s.error.is_some())
        .map(|s| s.seed)
        .collect();
    if !failed.is_empty() {
        return Err(Failure {
            code: EXIT_SOLVER,
            message: format!("seeds {failed:?} failed; see the report"),
        });
    }
    Ok(())
}

/// Human-readable summary of an experiment report.
pub fn summarize_report(report: &Value) -> Result<String, String> {
    let agg = report
        .get("aggregate")
        .ok_or("not a simulate report: missing \"aggregate\"")?;
    let cfg = report.get("config").ok_or("missing \"config\"")?;
    let num = |v: Option<&Value>| match v.and_then(Value::as_f64) {
        Some(x) => format!("{x:.4e}"),
        None => "n/a".into(),
    };
    let mut s = String::new();
    let model = &cfg["model"];
    let _ = writeln!(
        s,
        "n = {}, r = {}, N = {}, delta fraction = {}, seeds = {}",
        model["n"], model["r"], cfg["samples"], cfg["delta_fraction"],
        report["seeds"].as_array().map_or(0, Vec::len)
    );
    let _ = writeln!(s, "seeds without errors     {}", agg["seeds_ok"]);
    let _ = writeln!(s, "median s_(r+1)/s_r  MTFA(Sigma)      {}", num(agg.get("median_ratio_mtfa_true")));
    let _ = writeln!(s, "median s_(r+1)/s_r  MTFA(Sigma_hat)  {}", num(agg.get("median_ratio_mtfa_hat")));
    let _ = writeln!(s, "median s_(r+1)/s_r  robust           {}", num(agg.get("median_ratio_robust")));
    let _ = writeln!(s, "median rank         MTFA(Sigma_hat)  {}", num(agg.get("median_rank_mtfa_hat")));
    let _ = writeln!(s, "median rank         robust           {}", num(agg.get("median_rank_robust")));
    let _ = writeln!(s, "robust rank == r in {} of seeds", num(agg.get("robust_rank_hit_rate")));
    if let Some(sweep) = agg["sweep_hit_rate"].as_array() {
        for pair in sweep {
            let _ = writeln!(s, "  fraction {:<5} rank == r in {}", pair[0], num(pair.get(1)));
        }
    }
    Ok(s)
}

fn run_report(a: &ReportArgs, out: &mut dyn std::io::Write) -> Outcome {
    let text = std::fs::read_to_string(&a.input).map_err(io_fail)?;
    let value: Value = serde_json::from_str(&text).map_err(|e| Failure {
        code: EXIT_IO,
        message: format!("{}: {e}", a.input.display()),
    })?;
    let summary = summarize_report(&value).map_err(|m| Failure {
        code: EXIT_IO,
        message: m,
    })?;
    write!(out, "{summary}").map_err(io_fail)
}
