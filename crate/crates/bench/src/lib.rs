//! Benchmark fixtures: simulation-sized experiments and random Lasso
//! problems, seeded so every run measures the same work.

use stratx::check::random_lasso_problem;
use stratx::design::draw_stratified;
use stratx::sim::{population_for, Population};
use stratx::{BlockStructure, Blocking, Observed, Rng, SimulationConfig, WeightedLassoProblem};

const SEED: u64 = 7;

/// One observed experiment drawn from a simulation population.
pub struct Experiment {
    pub config: SimulationConfig,
    pub population: Population,
    pub blocks: BlockStructure,
    pub z: Vec<u8>,
    pub y: Vec<f64>,
}

impl Experiment {
    pub fn new(n: usize, blocking: Blocking) -> Self {
        let config = SimulationConfig { n, blocking, master_seed: SEED, ..SimulationConfig::default() };
        let population = population_for(&config).expect("default population builds");
        let blocks = config.blocks(&population).expect("scenario layout is valid");
        let z = draw_stratified(&blocks, &mut Rng::new(SEED, 1)).expect("layout admits a draw");
        let y = population.table.observe(&z);
        Self { config, population, blocks, z, y }
    }

    pub fn observed(&self) -> Observed<'_> {
        Observed::new(self.population.x.view(), &self.blocks, &self.z, &self.y).expect("shapes agree")
    }
}

/// A random weighted problem with λ between 2% and 60% of λ_max.
pub fn lasso_problem(n: usize, p: usize) -> WeightedLassoProblem {
    random_lasso_problem(&mut Rng::new(SEED, (n * 1000 + p) as u64), n, p)
}
