//! Self-checks run by `stratx check`: exact enumeration of a small design,
//! empirical tail bounds for stratified sampling without replacement, and
//! KKT certification of the Lasso solver on random problems.

use ndarray::{Array2, ShapeBuilder};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{BlockStructure, DataError, Observed, PotentialOutcomeTable};
use crate::design::{BlockSampler, DesignError};
use crate::estimate::{tau_unadj, var_unadj};
use crate::lasso::{kkt_violation, lambda_max, solve, LassoError, WeightedLassoProblem, KKT_TOLERANCE};
use crate::numerics::Rng;
use crate::sim::{Scenario, SimError};

#[derive(Debug, Error)]
pub enum CheckError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Design(#[from] DesignError),
    #[error(transparent)]
    Lasso(#[from] LassoError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOptions {
    pub seed: u64,
    /// Stratified draws per layout in the tail-bound suite.
    pub draws: usize,
    /// Random problems in the KKT suite.
    pub kkt_problems: usize,
    /// Multiplies σ_a inside the mean-deviation bound. Anything but 1 is a
    /// deliberately wrong bound, used to confirm the suite can fail.
    pub sigma_scale: f64,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self { seed: 1, draws: 100_000, kkt_problems: 50, sigma_scale: 1.0 }
    }
}

/// Outcome of one property: `statistic <= threshold` is a pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyResult {
    pub suite: String,
    pub property: String,
    pub statistic: f64,
    pub threshold: f64,
    pub passed: bool,
}

impl PropertyResult {
    fn new(suite: &str, property: String, statistic: f64, threshold: f64) -> Self {
        Self { suite: suite.to_string(), property, statistic, threshold, passed: statistic <= threshold }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub options: CheckOptions,
    pub results: Vec<PropertyResult>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &PropertyResult> {
        self.results.iter().filter(|r| !r.passed)
    }
}

pub fn run_checks(options: &CheckOptions) -> Result<CheckReport, CheckError> {
    let mut results = enumeration_suite()?;
    results.extend(tail_bound_suite(options)?);
    results.extend(kkt_suite(options)?);
    Ok(CheckReport { options: options.clone(), results })
}

/// All `k`-subsets of `0..n` in lexicographic order.
pub fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn go(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            go(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(0, n, k, &mut Vec::with_capacity(k), &mut out);
    out
}

/// Every assignment of a stratified design, by brute force over the
/// per-block subsets. Only meant for tiny designs.
pub fn enumerate_assignments(blocks: &BlockStructure) -> Vec<Vec<u8>> {
    let mut all = vec![vec![0u8; blocks.n()]];
    for m in 0..blocks.num_blocks() {
        let members = blocks.members(m);
        let choices = subsets(members.len(), blocks.treated(m));
        all = all
            .iter()
            .flat_map(|z| {
                choices.iter().map(move |c| {
                    let mut z = z.clone();
                    for &i in c {
                        z[members[i]] = 1;
                    }
                    z
                })
            })
            .collect();
    }
    all
}

/// Two blocks of four units, two treated per block, with heterogeneous
/// effects so the Neyman variance is strictly conservative.
pub fn enumeration_population() -> (BlockStructure, PotentialOutcomeTable) {
    let blocks = BlockStructure::new(vec![0, 0, 0, 0, 1, 1, 1, 1], vec![2, 2]).expect("fixed layout is valid");
    let y0 = vec![1.0, 2.5, -0.5, 3.0, 4.0, 6.5, 5.0, 2.0];
    let y1 = vec![2.0, 2.0, 1.5, 6.0, 7.5, 6.0, 9.0, 3.5];
    (blocks, PotentialOutcomeTable::new(y1, y0))
}

pub fn enumeration_suite() -> Result<Vec<PropertyResult>, CheckError> {
    let (blocks, table) = enumeration_population();
    let tau = table.tau;
    let x = Array2::<f64>::zeros((blocks.n(), 0));
    let assignments = enumerate_assignments(&blocks);
    let count = assignments.len() as f64;
    let mut estimates = Vec::with_capacity(assignments.len());
    let mut var_hats = Vec::with_capacity(assignments.len());
    for z in &assignments {
        let y = table.observe(z);
        let obs = Observed::new(x.view(), &blocks, z, &y)?;
        estimates.push(tau_unadj(&obs));
        var_hats.push(var_unadj(&obs));
    }
    let mean = estimates.iter().sum::<f64>() / count;
    let true_var = estimates.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / count;
    let mean_var_hat = var_hats.iter().sum::<f64>() / count;
    Ok(vec![
        PropertyResult::new(
            "enumeration",
            format!("|mean tau_unadj - tau| over {} assignments", assignments.len()),
            (mean - tau).abs(),
            1e-12 * tau.abs().max(1.0),
        ),
        PropertyResult::new(
            "enumeration",
            "randomization variance minus mean estimated variance".to_string(),
            true_var - mean_var_hat,
            0.0,
        ),
    ])
}

/// Tail-bound layout at the given size, with propensities evenly spaced on
/// [0.3, 0.7] across blocks.
pub fn tail_layout(scenario: Scenario, n: usize) -> Result<BlockStructure, CheckError> {
    let sizes = scenario.layout(n)?;
    let block_of: Vec<usize> = sizes.iter().enumerate().flat_map(|(m, &s)| std::iter::repeat_n(m, s)).collect();
    let m = sizes.len();
    let e: Vec<f64> = (0..m).map(|b| 0.3 + 0.4 * b as f64 / (m - 1).max(1) as f64).collect();
    Ok(BlockStructure::with_propensities(block_of, &e)?)
}

/// Per-block centered moments of the fixed sequences.
struct BlockMoments {
    mean_a: Vec<f64>,
    /// S_[m]ab with the (n_[m] - 1) divisor.
    cov_ab: Vec<f64>,
    sigma2_a: f64,
    kappa4_a: f64,
    kappa4_b: f64,
}

fn block_moments(blocks: &BlockStructure, a: &[f64], b: &[f64]) -> BlockMoments {
    let n = blocks.n() as f64;
    let mut out = BlockMoments { mean_a: Vec::new(), cov_ab: Vec::new(), sigma2_a: 0.0, kappa4_a: 0.0, kappa4_b: 0.0 };
    for m in 0..blocks.num_blocks() {
        let members = blocks.members(m);
        let size = members.len() as f64;
        let e = blocks.propensity(m);
        let ma = members.iter().map(|&i| a[i]).sum::<f64>() / size;
        let mb = members.iter().map(|&i| b[i]).sum::<f64>() / size;
        let mut cov = 0.0;
        for &i in members {
            let (da, db) = (a[i] - ma, b[i] - mb);
            cov += da * db;
            out.sigma2_a += da * da / (e * e);
            out.kappa4_a += da.powi(4) / e.powi(3);
            out.kappa4_b += db.powi(4) / e.powi(3);
        }
        out.mean_a.push(ma);
        out.cov_ab.push(cov / (size - 1.0));
    }
    out.sigma2_a /= n;
    out.kappa4_a /= n;
    out.kappa4_b /= n;
    out
}

/// Σ π_m (ā_[m]1 - ā_[m]) and Σ π_m (s_[m]ab - S_[m]ab) for one assignment,
/// with s the treated-group sample covariance.
fn deviations(blocks: &BlockStructure, moments: &BlockMoments, a: &[f64], b: &[f64], z: &[u8]) -> (f64, f64) {
    let (mut mean_dev, mut cov_dev) = (0.0, 0.0);
    for m in 0..blocks.num_blocks() {
        let treated: Vec<usize> = blocks.members(m).iter().copied().filter(|&i| z[i] == 1).collect();
        let k = treated.len() as f64;
        let ma = treated.iter().map(|&i| a[i]).sum::<f64>() / k;
        let mb = treated.iter().map(|&i| b[i]).sum::<f64>() / k;
        let s = treated.iter().map(|&i| (a[i] - ma) * (b[i] - mb)).sum::<f64>() / (k - 1.0);
        let pi = blocks.weight(m);
        mean_dev += pi * (ma - moments.mean_a[m]);
        cov_dev += pi * (s - moments.cov_ab[m]);
    }
    (mean_dev, cov_dev)
}

/// Empirical upper tails of the weighted mean and covariance deviations
/// against their exponential bounds, at t = 0.1 and 0.2 times the scale
/// (σ_a for the mean, (κ⁴_a κ⁴_b)^{1/4} for the covariance).
pub fn tail_bound_suite(options: &CheckOptions) -> Result<Vec<PropertyResult>, CheckError> {
    const N: usize = 100;
    let mut results = Vec::new();
    for (code, scenario) in [Scenario::Ms, Scenario::Fl, Scenario::Msfl].into_iter().enumerate() {
        let blocks = tail_layout(scenario, N)?;
        let n = blocks.n() as f64;
        let mut rng = Rng::new(options.seed, 100 + code as u64);
        // skewed, correlated sequences with block-level shifts
        let a: Vec<f64> = (0..N).map(|i| blocks.block_of(i) as f64 * 0.3 + rng.standard_normal().exp()).collect();
        let b: Vec<f64> = a.iter().map(|&ai| 0.5 * ai + rng.t3()).collect();
        let moments = block_moments(&blocks, &a, &b);
        let sigma_a = moments.sigma2_a.sqrt();
        let cov_scale = (moments.kappa4_a * moments.kappa4_b).sqrt().sqrt();

        let fractions = [0.1, 0.2];
        let mut mean_hits = [0usize; 2];
        let mut cov_hits = [0usize; 2];
        let mut sampler = BlockSampler::new(&blocks);
        let mut z = vec![0u8; N];
        for _ in 0..options.draws {
            sampler.fill(&mut rng, &mut z);
            let (dm, dc) = deviations(&blocks, &moments, &a, &b, &z);
            for (f, frac) in fractions.iter().enumerate() {
                mean_hits[f] += usize::from(dm >= frac * sigma_a);
                cov_hits[f] += usize::from(dc >= frac * cov_scale);
            }
        }
        let draws = options.draws as f64;
        let bound_sigma = options.sigma_scale * sigma_a;
        for (f, frac) in fractions.iter().enumerate() {
            let t = frac * sigma_a;
            results.push(PropertyResult::new(
                "tail",
                format!("{} mean deviation tail at t = {frac} sigma_a", scenario.name()),
                mean_hits[f] as f64 / draws,
                (-n * t * t / (4.0 * bound_sigma * bound_sigma)).exp(),
            ));
            let t = frac * cov_scale;
            results.push(PropertyResult::new(
                "tail",
                format!("{} covariance deviation tail at t = {frac} kappa", scenario.name()),
                cov_hits[f] as f64 / draws,
                (-n * t * t / (60.0 * cov_scale * cov_scale)).exp(),
            ));
        }
    }
    Ok(results)
}

/// Random weighted Lasso problem with Gaussian predictors, positive weights
/// and λ between 2% and 60% of λ_max.
pub fn random_lasso_problem(rng: &mut Rng, n: usize, p: usize) -> WeightedLassoProblem {
    let mut d = Array2::zeros((n, p).f());
    for v in d.iter_mut() {
        *v = rng.standard_normal();
    }
    let truth: Vec<f64> = (0..p).map(|j| if j < 3 { rng.t3() } else { 0.0 }).collect();
    let r: Vec<f64> = (0..n)
        .map(|i| (0..p).map(|j| d[[i, j]] * truth[j]).sum::<f64>() + rng.standard_normal())
        .collect();
    let v: Vec<f64> = (0..n).map(|_| 0.1 + rng.uniform()).collect();
    let problem = WeightedLassoProblem::new(r, d, v, 0.0);
    let lambda = lambda_max(&problem) * (0.02 + 0.58 * rng.uniform());
    problem.with_lambda(lambda)
}

/// g = Dᵀ V (r - Dβ), computed directly from the data.
fn direct_gradient(problem: &WeightedLassoProblem, beta: &[f64]) -> Vec<f64> {
    let d = &problem.predictors;
    let resid: Vec<f64> = (0..problem.n())
        .map(|i| {
            let fitted: f64 = beta.iter().enumerate().map(|(j, b)| d[[i, j]] * b).sum();
            problem.weights[i] * (problem.response[i] - fitted)
        })
        .collect();
    (0..problem.p()).map(|j| d.column(j).iter().zip(&resid).map(|(x, r)| x * r).sum()).collect()
}

pub fn kkt_suite(options: &CheckOptions) -> Result<Vec<PropertyResult>, CheckError> {
    let mut rng = Rng::new(options.seed, 200);
    let mut worst: f64 = 0.0;
    for _ in 0..options.kkt_problems {
        let n = 10 + rng.below(31);
        let p = 5 + rng.below(56);
        let problem = random_lasso_problem(&mut rng, n, p);
        let fit = solve(&problem)?;
        let g = direct_gradient(&problem, &fit.beta);
        let scale = lambda_max(&problem).max(1.0);
        worst = worst.max(kkt_violation(&fit.beta, &g, problem.lambda) / scale);
    }
    Ok(vec![PropertyResult::new(
        "kkt",
        format!("max relative KKT residual over {} random problems", options.kkt_problems),
        worst,
        KKT_TOLERANCE,
    )])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enumeration_counts() {
        assert_eq!(subsets(4, 2).len(), 6);
        assert_eq!(subsets(5, 0), vec![Vec::<usize>::new()]);
        let (blocks, _) = enumeration_population();
        let all = enumerate_assignments(&blocks);
        assert_eq!(all.len(), 36);
        let mut sorted = all.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 36);
        assert!(all.iter().all(|z| z[..4].iter().sum::<u8>() == 2 && z[4..].iter().sum::<u8>() == 2));
    }

    #[test]
    fn enumeration_properties_hold() {
        let results = enumeration_suite().unwrap();
        assert!(results.iter().all(|r| r.passed), "{results:?}");
        // heterogeneous effects: strictly conservative
        assert!(results[1].statistic < 0.0);
    }

    #[test]
    fn deviations_by_hand() {
        let blocks = BlockStructure::new(vec![0, 0, 0, 0], vec![2]).unwrap();
        let a = [1.0, 2.0, 3.0, 6.0];
        let b = [0.0, 1.0, 0.0, 1.0];
        let moments = block_moments(&blocks, &a, &b);
        assert!((moments.mean_a[0] - 3.0).abs() < 1e-15);
        let (dm, dc) = deviations(&blocks, &moments, &a, &b, &[1, 0, 0, 1]);
        assert!((dm - 0.5).abs() < 1e-15);
        // treated a = (1, 6), b = (0, 1): s = 2.5; block S = 2/3
        assert!((dc - (2.5 - 2.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn small_default_run_passes() {
        let options = CheckOptions { draws: 5_000, kkt_problems: 10, ..CheckOptions::default() };
        let report = run_checks(&options).unwrap();
        assert!(report.passed(), "{:?}", report.failures().collect::<Vec<_>>());
        assert_eq!(report.results.iter().filter(|r| r.suite == "tail").count(), 12);
    }

    #[test]
    fn shrunken_sigma_fails() {
        let options = CheckOptions { draws: 5_000, sigma_scale: 0.1, ..CheckOptions::default() };
        let results = tail_bound_suite(&options).unwrap();
        assert!(results.iter().any(|r| !r.passed));
    }
}
