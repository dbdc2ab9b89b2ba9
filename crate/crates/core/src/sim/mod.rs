//! Monte Carlo replication of the simulation study: fixed synthetic
//! populations, repeated (re)randomization, and table metrics with
//! bootstrap standard errors.

mod metrics;
mod population;
pub mod table;

pub use metrics::{raw_metrics, summarize, Baseline, Metric, Metrics, Raw, Series};
pub use population::{ar1_covariance, generate_population, Population, PopulationParams};
pub use table::{run_table, write_cell_estimates, write_table, CellSummary, SummaryRow, Table, TableSpec};

use ndarray::ArrayView2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{BlockStructure, DataError, Observed};
use crate::design::{DesignError, DesignKind, DesignSpec, Randomizer};
use crate::estimate::{
    lasso2_report, lasso_report, unadj_report, var_unadj, var_unadj_rerand, EstimateError, Method,
};
use crate::lasso::CvOptions;
use crate::numerics::{mix_seed, normal_quantile, Rng};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("cell {cell}: {source}")]
    Design { cell: String, source: DesignError },
    #[error("cell {cell}, replication {replication}: {source}")]
    Replication { cell: String, replication: usize, source: EstimateError },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    /// Many small blocks of 10.
    Ms,
    /// Two large blocks.
    Fl,
    /// Small blocks of 10 followed by two large blocks.
    Msfl,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::Ms, Scenario::Fl, Scenario::Msfl];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Ms => "ms",
            Scenario::Fl => "fl",
            Scenario::Msfl => "msfl",
        }
    }

    /// Block sizes in block order.
    pub fn layout(self, n: usize) -> Result<Vec<usize>, SimError> {
        let bad = || SimError::Config(format!("scenario {} cannot split n = {n}", self.name()));
        match self {
            Scenario::Ms => {
                if n % 10 != 0 || n == 0 {
                    return Err(bad());
                }
                Ok(vec![10; n / 10])
            }
            Scenario::Fl => {
                if n % 2 != 0 || n < 8 {
                    return Err(bad());
                }
                Ok(vec![n / 2; 2])
            }
            Scenario::Msfl => {
                let small = if n == 500 { 20 } else { n / 20 };
                let rest = n - 10 * small;
                if small == 0 || rest % 2 != 0 || rest < 8 {
                    return Err(bad());
                }
                let mut sizes = vec![10; small];
                sizes.extend([rest / 2; 2]);
                Ok(sizes)
            }
        }
    }

    fn code(self) -> u64 {
        self as u64
    }
}

impl std::str::FromStr for Scenario {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ms" => Ok(Scenario::Ms),
            "fl" => Ok(Scenario::Fl),
            "msfl" => Ok(Scenario::Msfl),
            other => Err(SimError::Config(format!("unknown scenario '{other}' (expected ms, fl or msfl)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Blocking {
    /// Complete randomization of n/2 units, analyzed as one block.
    No,
    /// Scenario blocks with e = 1/2.
    Eq,
    /// Scenario blocks with e evenly spaced on [0.3, 0.7] in block order.
    Uneq,
}

impl Blocking {
    pub const ALL: [Blocking; 3] = [Blocking::No, Blocking::Eq, Blocking::Uneq];

    pub fn name(self) -> &'static str {
        match self {
            Blocking::No => "no",
            Blocking::Eq => "eq",
            Blocking::Uneq => "uneq",
        }
    }

    /// Adjusted estimator used in cells with this blocking.
    pub fn adjusted_method(self) -> Method {
        match self {
            Blocking::Uneq => Method::Lasso2,
            _ => Method::Lasso,
        }
    }

    fn code(self) -> u64 {
        self as u64
    }
}

impl std::str::FromStr for Blocking {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "no" | "none" => Ok(Blocking::No),
            "eq" | "equal" => Ok(Blocking::Eq),
            "uneq" | "unequal" => Ok(Blocking::Uneq),
            other => Err(SimError::Config(format!("unknown blocking '{other}' (expected no, eq or uneq)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub n: usize,
    pub scenario: Scenario,
    pub blocking: Blocking,
    pub rerand: bool,
    pub population: PopulationParams,
    pub p_a: f64,
    pub replications: usize,
    pub bootstrap_reps: usize,
    pub master_seed: u64,
    pub alpha: f64,
    pub folds: usize,
    /// Rejection cap per rerandomized draw.
    pub max_draws: usize,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            n: 200,
            scenario: Scenario::Ms,
            blocking: Blocking::No,
            rerand: false,
            population: PopulationParams::default(),
            p_a: 0.001,
            replications: 1000,
            bootstrap_reps: 500,
            master_seed: 2024,
            alpha: 0.05,
            folds: 10,
            max_draws: 1_000_000,
        }
    }
}

const POPULATION_DOMAIN: u64 = 0x706f_7075_6c61_7469;
const BOOTSTRAP_DOMAIN: u64 = 0x626f_6f74_7374_7270;

impl SimulationConfig {
    /// Name used for the cell's output files.
    pub fn cell_name(&self) -> String {
        format!(
            "{}_n{}_{}_{}",
            self.scenario.name(),
            self.n,
            self.blocking.name(),
            if self.rerand { "rerand" } else { "rand" }
        )
    }

    pub fn population_seed(&self) -> u64 {
        let key = (self.n as u64) << 8 | self.scenario.code();
        mix_seed(mix_seed(self.master_seed, POPULATION_DOMAIN), key)
    }

    pub fn cell_seed(&self) -> u64 {
        let key = (self.n as u64) << 16 | self.scenario.code() << 8 | self.blocking.code() << 1 | self.rerand as u64;
        mix_seed(self.master_seed, key)
    }

    pub fn bootstrap_seed(&self) -> u64 {
        mix_seed(self.cell_seed(), BOOTSTRAP_DOMAIN)
    }

    /// The no-rerandomization cell with the same n, scenario and blocking.
    pub fn baseline(&self) -> SimulationConfig {
        SimulationConfig { rerand: false, ..self.clone() }
    }

    pub fn check(&self) -> Result<(), SimError> {
        if self.replications == 0 {
            return Err(SimError::Config("replications must be positive".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(SimError::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.p_a > 0.0 && self.p_a <= 1.0) {
            return Err(SimError::Config(format!("acceptance probability must lie in (0, 1], got {}", self.p_a)));
        }
        self.scenario.layout(self.n)?;
        Ok(())
    }

    /// Block structure used for both design and analysis.
    pub fn blocks(&self, population: &Population) -> Result<BlockStructure, SimError> {
        let n = population.block_of.len();
        let structure = match self.blocking {
            Blocking::No => BlockStructure::single(n, n / 2)?,
            Blocking::Eq => {
                let e = vec![0.5; population.num_blocks];
                BlockStructure::with_propensities(population.block_of.clone(), &e)?
            }
            Blocking::Uneq => {
                let m = population.num_blocks;
                let e: Vec<f64> = (0..m)
                    .map(|b| if m == 1 { 0.5 } else { 0.3 + 0.4 * b as f64 / (m - 1) as f64 })
                    .collect();
                BlockStructure::with_propensities(population.block_of.clone(), &e)?
            }
        };
        Ok(structure)
    }
}

/// Estimates from one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub replication: usize,
    pub draws_used: usize,
    pub mahalanobis: Option<f64>,
    pub unadj_tau: f64,
    /// Variance used for the unadjusted interval (rerandomization-aware in
    /// rerandomized cells).
    pub unadj_var: f64,
    /// σ̂²_unadj / n ignoring rerandomization.
    pub unadj_var_plain: f64,
    pub adjusted_tau: f64,
    pub adjusted_var: f64,
    pub s_hat: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub config: SimulationConfig,
    pub tau: f64,
    pub adjusted_method: Method,
    pub records: Vec<ReplicationRecord>,
}

impl CellResult {
    fn series(&self, pick: impl Fn(&ReplicationRecord) -> (f64, f64)) -> Series {
        let q = normal_quantile(1.0 - self.config.alpha / 2.0).expect("alpha checked");
        let mut s = Series::default();
        for rec in &self.records {
            let (t, v) = pick(rec);
            let half = q * v.max(0.0).sqrt();
            s.tau_hat.push(t);
            s.length.push(2.0 * half);
            s.covered.push((t - self.tau).abs() <= half);
        }
        s
    }

    pub fn unadj_series(&self) -> Series {
        self.series(|r| (r.unadj_tau, r.unadj_var))
    }

    pub fn adjusted_series(&self) -> Series {
        self.series(|r| (r.adjusted_tau, r.adjusted_var))
    }

    pub fn mean_draws(&self) -> f64 {
        self.records.iter().map(|r| r.draws_used as f64).sum::<f64>() / self.records.len() as f64
    }
}

fn replicate(
    config: &SimulationConfig,
    population: &Population,
    blocks: &BlockStructure,
    randomizer: &Randomizer,
    cv: &CvOptions,
    r: usize,
) -> Result<ReplicationRecord, SimError> {
    let cell = || config.cell_name();
    let mut rng = Rng::new(config.cell_seed(), r as u64);
    let drawn = randomizer
        .clone()
        .draw(&mut rng)
        .map_err(|source| SimError::Design { cell: cell(), source })?;
    let y = population.table.observe(&drawn.z);
    let obs = Observed::new(population.x.view(), blocks, &drawn.z, &y)?;
    let wrap = |source| SimError::Replication { cell: cell(), replication: r, source };

    let unadj = unadj_report(&obs, config.alpha).map_err(wrap)?;
    let unadj_var_plain = var_unadj(&obs);
    let unadj_var = match drawn.threshold_a {
        Some(a) => var_unadj_rerand(&obs, population.w.view(), a).map_err(wrap)?.0,
        None => unadj_var_plain,
    };
    let adjusted = match config.blocking.adjusted_method() {
        Method::Lasso2 => lasso2_report(&obs, config.alpha, cv, &mut rng),
        _ => lasso_report(&obs, config.alpha, cv, &mut rng),
    }
    .map_err(wrap)?;
    Ok(ReplicationRecord {
        replication: r,
        draws_used: drawn.draws_used,
        mahalanobis: drawn.mahalanobis,
        unadj_tau: unadj.tau_hat,
        unadj_var,
        unadj_var_plain,
        adjusted_tau: adjusted.tau_hat,
        adjusted_var: adjusted.var_hat,
        s_hat: adjusted.s_hat,
    })
}

/// Design for a cell: complete or stratified, optionally rerandomized on
/// the population's design covariates.
pub fn cell_design(config: &SimulationConfig, blocks: &BlockStructure, w: ArrayView2<'_, f64>) -> DesignSpec {
    let kind = match (config.blocking, config.rerand) {
        (Blocking::No, false) => DesignKind::Complete,
        (Blocking::No, true) => DesignKind::Rerandomized,
        (_, false) => DesignKind::Stratified,
        (_, true) => DesignKind::StratifiedRerandomized,
    };
    let mut spec = DesignSpec::stratified(blocks.clone());
    if config.rerand {
        spec = spec.rerandomized(w.to_owned(), config.p_a).with_max_draws(config.max_draws);
    }
    spec.kind = kind;
    spec
}

/// Runs every replication of one cell on a given population. Results are
/// ordered by replication and independent of the thread count.
pub fn run_cell_on(config: &SimulationConfig, population: &Population) -> Result<CellResult, SimError> {
    config.check()?;
    let blocks = config.blocks(population)?;
    let spec = cell_design(config, &blocks, population.w.view());
    let randomizer = Randomizer::new(&spec).map_err(|source| SimError::Design { cell: config.cell_name(), source })?;
    let cv = CvOptions { folds: config.folds, ..CvOptions::default() };
    let results: Vec<Result<ReplicationRecord, SimError>> = (0..config.replications)
        .into_par_iter()
        .map(|r| replicate(config, population, &blocks, &randomizer, &cv, r))
        .collect();
    let records = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(CellResult {
        config: config.clone(),
        tau: population.table.tau,
        adjusted_method: config.blocking.adjusted_method(),
        records,
    })
}

/// Population of the cell's (n, scenario) pair.
pub fn population_for(config: &SimulationConfig) -> Result<Population, SimError> {
    let mut rng = Rng::new(config.population_seed(), 0);
    generate_population(config.n, config.scenario, &config.population, &mut rng)
}

/// Generates the population and runs the cell.
pub fn run_cell(config: &SimulationConfig) -> Result<CellResult, SimError> {
    config.check()?;
    run_cell_on(config, &population_for(config)?)
}
