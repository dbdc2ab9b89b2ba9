use ndarray::{Array2, ShapeBuilder};
use serde::{Deserialize, Serialize};

use crate::data::PotentialOutcomeTable;
use crate::numerics::{Cholesky, Rng};

use super::{Scenario, SimError};

/// Fixed finite population of one (n, scenario) pair.
#[derive(Debug, Clone)]
pub struct Population {
    pub table: PotentialOutcomeTable,
    pub x: Array2<f64>,
    /// First `k` columns of `x`.
    pub w: Array2<f64>,
    /// Scenario block of each unit, 0-based.
    pub block_of: Vec<usize>,
    pub num_blocks: usize,
    pub beta: [Vec<f64>; 2],
    /// Noise variance per arm, `[control, treated]`.
    pub noise_var: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopulationParams {
    pub p: usize,
    pub s: usize,
    pub rho: f64,
    pub k: usize,
    pub snr: f64,
}

impl Default for PopulationParams {
    fn default() -> Self {
        Self { p: 400, s: 10, rho: 0.6, k: 4, snr: 10.0 }
    }
}

/// Σ_ij = ρ^|i-j|.
pub fn ar1_covariance(p: usize, rho: f64) -> Array2<f64> {
    Array2::from_shape_fn((p, p), |(i, j)| rho.powi((i as i32 - j as i32).abs()))
}

fn finite_variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n
}

/// Draws X, β(z) and the potential outcomes
/// Y_i(z) = (B_i/M)^{2z+1} + x_iᵀβ(z) + ε_i(z).
pub fn generate_population(
    n: usize,
    scenario: Scenario,
    params: &PopulationParams,
    rng: &mut Rng,
) -> Result<Population, SimError> {
    let PopulationParams { p, s, rho, k, snr } = *params;
    if s > p || k > p || !(snr > 0.0) || !(rho.abs() < 1.0) {
        return Err(SimError::Config(format!("invalid population parameters {params:?}")));
    }
    let sizes = scenario.layout(n)?;
    let block_of: Vec<usize> = sizes.iter().enumerate().flat_map(|(m, &sz)| std::iter::repeat_n(m, sz)).collect();
    let num_blocks = sizes.len();

    let sigma = ar1_covariance(p, rho);
    let chol = Cholesky::factor(sigma.view()).map_err(|e| SimError::Config(e.to_string()))?;
    let lower = chol.lower();
    let mut x = Array2::<f64>::zeros((n, p).f());
    let mut g = vec![0.0; p];
    for i in 0..n {
        g.iter_mut().for_each(|v| *v = rng.standard_normal());
        for a in 0..p {
            let row = lower.row(a);
            x[[i, a]] = (0..=a).map(|b| row[b] * g[b]).sum();
        }
    }
    // row-major copy keeps downstream row access cheap
    let x = x.as_standard_layout().into_owned();

    let mut beta = [vec![0.0; p], vec![0.0; p]];
    for arm in [1usize, 0] {
        for j in 0..s {
            beta[arm][j] = rng.t3();
        }
    }

    let mut outcomes = [vec![0.0; n], vec![0.0; n]];
    let mut noise_var = [0.0; 2];
    for arm in [1usize, 0] {
        let signal: Vec<f64> = (0..n)
            .map(|i| {
                let b = (block_of[i] + 1) as f64 / num_blocks as f64;
                let lin: f64 = (0..s).map(|j| x[[i, j]] * beta[arm][j]).sum();
                b.powi(2 * arm as i32 + 1) + lin
            })
            .collect();
        noise_var[arm] = finite_variance(&signal) / snr;
        let sd = noise_var[arm].sqrt();
        outcomes[arm] = signal.iter().map(|v| v + sd * rng.standard_normal()).collect();
    }
    let [y0, y1] = outcomes;
    let w = x.slice(ndarray::s![.., ..k]).to_owned();
    Ok(Population { table: PotentialOutcomeTable::new(y1, y0), x, w, block_of, num_blocks, beta, noise_var })
}
