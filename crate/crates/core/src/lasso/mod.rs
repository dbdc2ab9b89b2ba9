//! Weighted Lasso: problem builders, coordinate-descent solver and
//! cross-validated tuning.

mod cv;
mod problem;
mod solver;

pub use cv::{cv_select, fold_assignment, lambda_grid, CvOptions};
pub use problem::{build_arm_problem, build_projection_problem, Adjustment, WeightedLassoProblem};
pub use solver::{
    gradient, kkt_violation, lambda_max, objective, solve, CvDiagnostics, LassoFit, PathSolver, KKT_TOLERANCE,
    MAX_SWEEPS,
};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LassoError {
    #[error("coordinate descent stopped after {sweeps} sweeps at lambda {lambda} with KKT residual {kkt_residual}")]
    MaxIters { sweeps: usize, kkt_residual: f64, lambda: f64 },
    #[error("lambda must be finite and nonnegative, got {0}")]
    InvalidLambda(f64),
    #[error("cross-validation needs at least {folds} units in the arm, found {units}")]
    TooFewUnits { units: usize, folds: usize },
}
