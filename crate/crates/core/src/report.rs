//! Stable JSON documents emitted by the command-line tool. The robust
//! result layout is described by `schema/robust-result.schema.json`; bump
//! [`RESULT_VERSION`] on any breaking change.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::estimation::DeltaMax;
use crate::mtfa::MtfaSolution;
use crate::recovery::RobustResult;

pub const RESULT_VERSION: &str = "rfa-result/1";

/// The bundled schema for [`RobustReport`].
pub const ROBUST_SCHEMA: &str = include_str!("../schema/robust-result.schema.json");

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub solve_ms: f64,
    pub recovery_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kkt {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectra {
    #[serde(rename = "R")]
    pub r: Vec<f64>,
    #[serde(rename = "Lambda")]
    pub lambda: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certification {
    pub passed: bool,
    pub threshold: f64,
    /// Residuals divided by `1 + tr R`.
    pub normalized: NormalizedResiduals,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedResiduals {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub gap: f64,
    pub boundary: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualSummary {
    pub converged: bool,
    pub iterations: usize,
    pub grad_norm: f64,
    pub delta: f64,
    pub delta_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrices {
    pub sigma_star: Vec<Vec<f64>>,
    #[serde(rename = "R")]
    pub r: Vec<Vec<f64>>,
    /// Diagonal of `D`.
    #[serde(rename = "D")]
    pub d: Vec<f64>,
    #[serde(rename = "X")]
    pub x: Vec<Vec<f64>>,
    #[serde(rename = "Theta")]
    pub theta: Vec<Vec<f64>>,
    /// Diagonal of `Gamma`.
    #[serde(rename = "Gamma")]
    pub gamma: Vec<f64>,
    pub loadings: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustReport {
    pub version: String,
    pub config_echo: Value,
    pub lambda_star: f64,
    pub objective: f64,
    pub duality_gap: f64,
    pub kkt: Kkt,
    pub boundary_residual: f64,
    #[serde(rename = "rank_R")]
    pub rank_r: usize,
    pub kernel_dim: usize,
    pub non_unique: bool,
    pub kl_to_sigma_hat: f64,
    pub spectra: Spectra,
    pub certification: Certification,
    pub dual: DualSummary,
    pub matrices: Matrices,
    pub timings: Timings,
}

impl RobustReport {
    pub fn new(res: &RobustResult, delta_max: f64, config_echo: Value, timings: Timings) -> Self {
        let dec = &res.decomposition;
        let sol = &res.solution;
        let cert = &res.certificate;
        let n = dec.r.n();
        let r_spectrum = dec.r.singular_values(n).unwrap_or_default();
        let loadings = (0..dec.loadings.rows())
            .map(|i| dec.loadings.row(i).to_vec())
            .collect();
        Self {
            version: RESULT_VERSION.into(),
            config_echo,
            lambda_star: sol.lambda(),
            objective: sol.objective,
            duality_gap: dec.duality_gap,
            kkt: Kkt {
                c1: dec.kkt.c1,
                c2: dec.kkt.c2,
                c3: dec.kkt.c3,
            },
            boundary_residual: dec.boundary_residual,
            rank_r: dec.rank_r,
            kernel_dim: dec.kernel_dim,
            non_unique: dec.non_unique,
            kl_to_sigma_hat: dec.kl_to_sigma_hat,
            spectra: Spectra {
                r: r_spectrum,
                lambda: dec.lambda_spectrum.clone(),
            },
            certification: Certification {
                passed: cert.passed,
                threshold: cert.threshold,
                normalized: NormalizedResiduals {
                    c1: cert.c1,
                    c2: cert.c2,
                    c3: cert.c3,
                    gap: cert.gap,
                    boundary: cert.boundary,
                },
            },
            dual: DualSummary {
                converged: sol.converged,
                iterations: sol.iterations,
                grad_norm: sol.grad_norm,
                delta: sol.delta,
                delta_max,
            },
            matrices: Matrices {
                sigma_star: dec.sigma.to_rows(),
                r: dec.r.to_rows(),
                d: dec.d.diag(),
                x: sol.x().to_rows(),
                theta: sol.theta.to_rows(),
                gamma: sol.gamma.diag(),
                loadings,
            },
            timings,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaMaxReport {
    pub version: String,
    /// Closed-form ceiling `sum log gamma_i + log|Sigma_hat|`.
    pub delta_max: f64,
    /// `KL(Sigma_D || Sigma_hat)` of the diagonal minimizer; the ceiling is
    /// twice this value.
    pub kl_of_sigma_d: f64,
    /// Diagonal of `Sigma_D`.
    pub sigma_d: Vec<f64>,
    pub n: usize,
    pub samples: usize,
}

impl DeltaMaxReport {
    pub fn new(dm: &DeltaMax, samples: usize) -> Self {
        Self {
            version: RESULT_VERSION.into(),
            delta_max: dm.delta_max,
            kl_of_sigma_d: dm.kl_of_sigma_d,
            sigma_d: dm.sigma_d.diag(),
            n: dm.sigma_d.n(),
            samples,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MtfaReport {
    pub version: String,
    pub config_echo: Value,
    pub trace: f64,
    pub converged: bool,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub rank: usize,
    pub singular_values: Vec<f64>,
    pub certificate: MtfaCertificateSummary,
    #[serde(rename = "R")]
    pub r: Vec<Vec<f64>>,
    #[serde(rename = "D")]
    pub d: Vec<f64>,
    pub timings: Timings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MtfaCertificateSummary {
    pub min_eig_lambda: f64,
    pub complementarity: f64,
    pub diag_complementarity: f64,
    pub gamma_violation: f64,
    pub holds: bool,
}

impl MtfaReport {
    pub fn new(
        sol: &MtfaSolution,
        singular_values: Vec<f64>,
        rank: usize,
        cert_tol: f64,
        config_echo: Value,
        timings: Timings,
    ) -> Self {
        let c = &sol.certificate;
        Self {
            version: RESULT_VERSION.into(),
            config_echo,
            trace: sol.trace_r,
            converged: sol.converged,
            iterations: sol.iterations,
            primal_residual: sol.primal_residual,
            dual_residual: sol.dual_residual,
            rank,
            singular_values,
            certificate: MtfaCertificateSummary {
                min_eig_lambda: c.min_eig_lambda,
                complementarity: c.complementarity,
                diag_complementarity: c.diag_complementarity,
                gamma_violation: c.gamma_violation,
                holds: c.holds(sol.trace_r, cert_tol),
            },
            r: sol.r.to_rows(),
            d: sol.d.diag(),
            timings,
        }
    }
}
