//! Projected gradient on `(lambda, X)` with spectral (Barzilai-Borwein)
//! trial steps and a monotone Armijo backtracking along the projected arc.

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use super::point::{dual_objective, gradient_from_sigma, DualGradient, DualPoint};
use super::projection::CfProjector;
use crate::error::{Error, Result};
use crate::estimation::{delta_max, CovarianceEstimate};
use crate::linalg::SymMat;

const MIN_STEP: f64 = 1e-12;
const MAX_STEP: f64 = 1e12;
/// Line-search contraction below which an iteration is declared stalled.
const MIN_BACKTRACK: f64 = 1e-18;
/// Relative resolution of `F` (a few ulps of the log-determinant sums).
pub const F_NOISE: f64 = 1e-14;

/// How the trial steps for the two blocks are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepRule {
    /// One Barzilai-Borwein step shared by `lambda` and `X`.
    Joint,
    /// Separate Barzilai-Borwein steps for `lambda` and for `X`.
    Blockwise,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DualOptions {
    /// Stop when the projected-gradient residual is below `tol * (1 + |F|)`.
    pub tol: f64,
    pub max_iter: usize,
    pub armijo_c: f64,
    pub backtrack: f64,
    pub lambda_floor: f64,
    pub lambda_cap: f64,
    pub x_norm_cap: f64,
    pub step_rule: StepRule,
    pub record_trace: bool,
}

impl Default for DualOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 100_000,
            armijo_c: 1e-4,
            backtrack: 0.5,
            lambda_floor: 1e-10,
            lambda_cap: 1e10,
            x_norm_cap: 1e8,
            step_rule: StepRule::Blockwise,
            record_trace: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub objective: f64,
    pub lambda: f64,
    pub residual: f64,
    pub step: f64,
}

/// Dual optimum with the multipliers split as `Theta = chi(X)`,
/// `Gamma = chi(X) - X`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DualSolution {
    pub point: DualPoint,
    pub theta: SymMat,
    pub gamma: SymMat,
    /// `Sigma = W^{-1}` at the returned point.
    pub sigma: SymMat,
    pub objective: f64,
    /// Projected-gradient residual `||z - P(z - grad F(z))||`.
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub delta: f64,
    pub trace: Vec<TraceRow>,
}

impl DualSolution {
    pub fn lambda(&self) -> f64 {
        self.point.lambda()
    }

    pub fn x(&self) -> &SymMat {
        self.point.x()
    }
}

/// Minimizes `F` over the feasible set starting from `(1, 0)`.
pub fn solve_dual(est: &CovarianceEstimate, delta: f64, opts: &DualOptions) -> Result<DualSolution> {
    solve_dual_from(est, delta, opts, 1.0, &SymMat::zeros(est.n()))
}

/// Same as [`solve_dual`] from a caller-supplied feasible start.
pub fn solve_dual_from(
    est: &CovarianceEstimate,
    delta: f64,
    opts: &DualOptions,
    lambda0: f64,
    x0: &SymMat,
) -> Result<DualSolution> {
    let dm = delta_max(est)?.delta_max;
    if !(delta > 0.0) || delta >= dm {
        return Err(Error::DeltaTooLarge {
            delta,
            delta_max: dm,
        });
    }
    let start = DualPoint::new(lambda0, x0.clone(), est)?;
    Solver::new(est, delta, opts, start)?.run()
}

struct Iterate {
    point: DualPoint,
    sigma: SymMat,
    f: f64,
    grad: DualGradient,
}

struct Solver<'a> {
    est: &'a CovarianceEstimate,
    delta: f64,
    opts: &'a DualOptions,
    cur: Iterate,
    projector: CfProjector,
    check_projector: CfProjector,
    step_lambda: f64,
    step_x: f64,
    trace: Vec<TraceRow>,
}

impl<'a> Solver<'a> {
    fn new(
        est: &'a CovarianceEstimate,
        delta: f64,
        opts: &'a DualOptions,
        start: DualPoint,
    ) -> Result<Self> {
        let cur = Self::evaluate(est, delta, start)?;
        let scale = cur.grad.d_x.max_abs().max(cur.grad.d_lambda.abs()).max(1.0);
        let n = est.n();
        Ok(Self {
            est,
            delta,
            opts,
            cur,
            projector: CfProjector::new(n),
            check_projector: CfProjector::new(n),
            step_lambda: 1.0 / scale,
            step_x: 1.0 / scale,
            trace: Vec::new(),
        })
    }

    fn evaluate(est: &CovarianceEstimate, delta: f64, point: DualPoint) -> Result<Iterate> {
        let sigma = point.sigma().map_err(|_| {
            Error::NumericalBreakdown("W lost positive definiteness at an accepted point".into())
        })?;
        let f = dual_objective(&point, est, delta);
        let grad = gradient_from_sigma(&point, &sigma, est, delta);
        Ok(Iterate {
            point,
            sigma,
            f,
            grad,
        })
    }

    fn project_lambda(&self, v: f64) -> f64 {
        v.max(self.opts.lambda_floor)
    }

    /// `||z - P(z - grad F(z))||` with a unit step.
    fn natural_residual(&mut self) -> Result<f64> {
        let cur = &self.cur;
        let lam = self.project_lambda(cur.point.lambda() - cur.grad.d_lambda);
        let z = cur.point.x().axpy(-1.0, &cur.grad.d_x);
        let px = self.check_projector.project(&z, 1.0)?;
        let dl = lam - cur.point.lambda();
        let dx = px.sub(cur.point.x()).frobenius_norm();
        Ok((dl * dl + dx * dx).sqrt())
    }

    fn safeguard(&self, p: &DualPoint) -> Result<()> {
        if p.lambda() > self.opts.lambda_cap {
            return Err(Error::NumericalBreakdown(format!(
                "lambda = {:e} exceeded the safeguard {:e}",
                p.lambda(),
                self.opts.lambda_cap
            )));
        }
        if p.x().max_abs() > self.opts.x_norm_cap {
            return Err(Error::NumericalBreakdown(format!(
                "|X| = {:e} exceeded the safeguard {:e}",
                p.x().max_abs(),
                self.opts.x_norm_cap
            )));
        }
        Ok(())
    }

    fn run(mut self) -> Result<DualSolution> {
        let mut converged = false;
        let mut residual = f64::INFINITY;
        let mut iterations = 0;
        let mut stalls = 0;

        while iterations < self.opts.max_iter {
            iterations += 1;
            let tol = self.opts.tol * (1.0 + self.cur.f.abs());
            let (t_l, t_x) = match self.opts.step_rule {
                StepRule::Joint => (self.step_x, self.step_x),
                StepRule::Blockwise => (self.step_lambda, self.step_x),
            };

            let lam = self.cur.point.lambda();
            let lam_trial = self.project_lambda(lam - t_l * self.cur.grad.d_lambda);
            let z = self.cur.point.x().axpy(-t_x, &self.cur.grad.d_x);
            let x_trial = self.projector.project(&z, t_x)?;
            let d_lam = lam_trial - lam;
            let d_x = x_trial.sub(self.cur.point.x());

            // ||d(1)|| <= ||d(t)|| max(1, 1/t) blockwise
            let bl = d_lam.abs() * (1.0 / t_l).max(1.0);
            let bx = d_x.frobenius_norm() * (1.0 / t_x).max(1.0);
            let bound = (bl * bl + bx * bx).sqrt();
            if bound <= tol {
                residual = bound;
                converged = true;
                break;
            }
            if bound <= 100.0 * tol || iterations % 500 == 0 {
                residual = self.natural_residual()?;
                if residual <= tol {
                    converged = true;
                    break;
                }
            }

            let slope =
                self.cur.grad.d_lambda * d_lam + self.cur.grad.d_x.inner(&d_x).expect("dims");
            // below this the change in F is not resolvable in floating point
            let f_noise = F_NOISE * (1.0 + self.cur.f.abs());
            let mut s = 1.0;
            let mut accepted = None;
            if slope.abs() <= f_noise {
                // approximate Armijo: the decrease cannot be measured, so
                // accept the full step unless F visibly increases
                if let Ok(p) =
                    DualPoint::with_domain_check(lam_trial, x_trial.clone(), self.est)
                {
                    if dual_objective(&p, self.est, self.delta) <= self.cur.f + f_noise {
                        accepted = Some(p);
                    }
                }
            } else if slope < 0.0 {
                while s >= MIN_BACKTRACK {
                    let cand_l = lam + s * d_lam;
                    let cand_x = self.cur.point.x().axpy(s, &d_x);
                    if let Ok(p) = DualPoint::with_domain_check(cand_l, cand_x, self.est) {
                        let f = dual_objective(&p, self.est, self.delta);
                        if f <= self.cur.f + self.opts.armijo_c * s * slope {
                            accepted = Some(p);
                            break;
                        }
                    }
                    s *= self.opts.backtrack;
                }
            }

            let Some(p) = accepted else {
                // no descent along the arc: either stationary to rounding or
                // the trial steps are badly scaled
                residual = self.natural_residual()?;
                if residual <= tol {
                    converged = true;
                    break;
                }
                stalls += 1;
                if stalls > 50 {
                    warn!("dual solver stalled with residual {residual:e}");
                    break;
                }
                self.step_lambda = (self.step_lambda * 0.1).max(MIN_STEP);
                self.step_x = (self.step_x * 0.1).max(MIN_STEP);
                continue;
            };
            self.safeguard(&p)?;
            let next = Self::evaluate(self.est, self.delta, p)?;

            let s_l = next.point.lambda() - lam;
            let y_l = next.grad.d_lambda - self.cur.grad.d_lambda;
            let s_x = next.point.x().sub(self.cur.point.x());
            let y_x = next.grad.d_x.sub(&self.cur.grad.d_x);
            let ss_x = s_x.inner(&s_x).expect("dims");
            let sy_x = s_x.inner(&y_x).expect("dims");
            match self.opts.step_rule {
                StepRule::Joint => {
                    let ss = s_l * s_l + ss_x;
                    let sy = s_l * y_l + sy_x;
                    self.step_x = bb_step(ss, sy, self.step_x);
                }
                StepRule::Blockwise => {
                    self.step_lambda = bb_step(s_l * s_l, s_l * y_l, self.step_lambda);
                    self.step_x = bb_step(ss_x, sy_x, self.step_x);
                }
            }

            if self.opts.record_trace {
                self.trace.push(TraceRow {
                    iteration: iterations,
                    objective: next.f,
                    lambda: next.point.lambda(),
                    residual: bound,
                    step: s,
                });
            }
            if iterations % 1000 == 0 {
                debug!(
                    "dual iter {iterations}: F = {:.12e}, lambda = {:.6e}, bound = {bound:.3e}",
                    next.f,
                    next.point.lambda()
                );
            }
            self.cur = next;
        }

        if !converged {
            residual = self.natural_residual()?;
            converged = residual <= self.opts.tol * (1.0 + self.cur.f.abs());
            if !converged {
                warn!(
                    "dual solver stopped after {iterations} iterations with residual {residual:e}"
                );
            }
        }

        let Iterate {
            point, sigma, f, ..
        } = self.cur;
        let theta = point.x().chi();
        let gamma = theta.sub(point.x());
        Ok(DualSolution {
            theta,
            gamma,
            sigma,
            objective: f,
            grad_norm: residual,
            iterations,
            converged,
            delta: self.delta,
            trace: self.trace,
            point,
        })
    }
}

fn bb_step(ss: f64, sy: f64, previous: f64) -> f64 {
    if sy > 0.0 && ss > 0.0 {
        (ss / sy).clamp(MIN_STEP, MAX_STEP)
    } else if ss == 0.0 {
        previous
    } else {
        (previous * 10.0).min(MAX_STEP)
    }
}
