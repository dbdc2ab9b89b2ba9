//! Design and analysis of stratified (re)randomized experiments with
//! high-dimensional covariates: assignment generation, unadjusted and
//! Lasso-adjusted average treatment effect estimators with conservative
//! variances, and the Monte Carlo harness used to evaluate them.

pub mod check;
pub mod data;
pub mod design;
pub mod estimate;
pub mod io;
pub mod lasso;
pub mod numerics;
pub mod sim;

pub use check::{run_checks, CheckError, CheckOptions, CheckReport, PropertyResult};
pub use data::{BlockStructure, DataError, ExperimentData, Observed, PotentialOutcomeTable, ValidationReport, Violation};
pub use design::{DesignError, DesignKind, DesignResult, DesignSpec, Randomizer};
pub use estimate::{EstimateError, EstimateReport, Method, RerandVarianceParts};
pub use io::{IngestError, Schema};
pub use lasso::{CvDiagnostics, CvOptions, LassoError, LassoFit, WeightedLassoProblem};
pub use numerics::{NumericsError, Rng};
pub use sim::{Blocking, CellResult, Scenario, SimError, SimulationConfig};

/// Any error the library can report.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Design(#[from] DesignError),
    #[error(transparent)]
    Estimate(#[from] EstimateError),
    #[error(transparent)]
    Lasso(#[from] LassoError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Check(#[from] CheckError),
}
