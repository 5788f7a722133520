//! Dual of the KL-constrained trace minimization, in the simplified
//! `(lambda, X)` form with `X = Theta - Gamma`.

mod point;
mod projection;
mod solver;

pub use point::{
    dual_gradient, dual_objective, dual_value_j, DualGradient, DualPoint, DIAG_SLACK, EIG_SLACK,
};
pub use projection::{project_cf, CfProjector, MAX_ROUNDS};
pub use solver::{
    solve_dual, solve_dual_from, DualOptions, DualSolution, StepRule, TraceRow, F_NOISE,
};
