//! Seeded randomness, distribution functions and small dense linear algebra.

mod distributions;
mod linalg;
mod rng;

pub use distributions::{
    chi2_cdf, chi2_pdf, chi2_quantile, gamma_p, gamma_q, ln_gamma, normal_cdf, normal_quantile,
};
pub use linalg::{solve_spd, Cholesky, PIVOT_TOLERANCE};
pub use rng::{mix_seed, Rng};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericsError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("matrix is rank deficient at pivot {pivot}")]
    RankDeficient { pivot: usize },
    #[error("{what} did not converge after {iterations} iterations")]
    NoConvergence { what: &'static str, iterations: usize },
    #[error("cannot choose {k} items from {n}")]
    SampleTooLarge { n: usize, k: usize },
}
