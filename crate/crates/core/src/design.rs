//! Treatment assignment: complete, stratified, and (stratified)
//! rerandomization by Mahalanobis balance.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{BlockStructure, DataError};
use crate::numerics::{chi2_quantile, Cholesky, NumericsError, Rng};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DesignError {
    #[error("block {block}: {treated} treated of {size} units violates 2 <= n1 <= n - 2")]
    Bounds { block: usize, treated: usize, size: usize },
    #[error("rerandomization needs design covariates")]
    MissingCovariates,
    #[error("design covariates have {found} rows, expected {expected}")]
    CovariateRows { expected: usize, found: usize },
    #[error("acceptance probability must lie in (0, 1], got {0}")]
    AcceptanceProbability(f64),
    #[error("complete randomization requires a single block, got {0}")]
    NotSingleBlock(usize),
    #[error("covariance of the design covariate mean difference is singular (pivot {pivot}); drop collinear columns")]
    RankDeficient { pivot: usize },
    #[error("no acceptable assignment within {draws} draws")]
    MaxDrawsExceeded { draws: usize },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DesignKind {
    Complete,
    Stratified,
    Rerandomized,
    StratifiedRerandomized,
}

impl DesignKind {
    pub fn rerandomizes(self) -> bool {
        matches!(self, DesignKind::Rerandomized | DesignKind::StratifiedRerandomized)
    }

    pub fn stratifies(self) -> bool {
        matches!(self, DesignKind::Stratified | DesignKind::StratifiedRerandomized)
    }
}

pub const DEFAULT_ACCEPTANCE: f64 = 0.001;

#[derive(Debug, Clone)]
pub struct DesignSpec {
    pub kind: DesignKind,
    pub blocks: BlockStructure,
    pub w: Option<Array2<f64>>,
    pub p_a: f64,
    pub max_draws: Option<usize>,
}

impl DesignSpec {
    pub fn complete(n: usize, n1: usize) -> Result<Self, DesignError> {
        Ok(Self {
            kind: DesignKind::Complete,
            blocks: BlockStructure::single(n, n1)?,
            w: None,
            p_a: 1.0,
            max_draws: None,
        })
    }

    pub fn stratified(blocks: BlockStructure) -> Self {
        Self { kind: DesignKind::Stratified, blocks, w: None, p_a: 1.0, max_draws: None }
    }

    /// Turns a complete or stratified design into its rerandomized version.
    pub fn rerandomized(mut self, w: Array2<f64>, p_a: f64) -> Self {
        self.kind = if self.kind.stratifies() {
            DesignKind::StratifiedRerandomized
        } else {
            DesignKind::Rerandomized
        };
        self.w = Some(w);
        self.p_a = p_a;
        self
    }

    pub fn with_max_draws(mut self, max_draws: usize) -> Self {
        self.max_draws = Some(max_draws);
        self
    }

    /// `10 * ceil(1 / p_a)` unless overridden.
    pub fn draw_cap(&self) -> usize {
        self.max_draws.unwrap_or_else(|| 10 * (1.0 / self.p_a).ceil() as usize)
    }

    pub fn check(&self) -> Result<(), DesignError> {
        check_bounds(&self.blocks)?;
        if !self.kind.stratifies() && self.blocks.num_blocks() != 1 {
            return Err(DesignError::NotSingleBlock(self.blocks.num_blocks()));
        }
        if self.kind.rerandomizes() {
            let w = self.w.as_ref().ok_or(DesignError::MissingCovariates)?;
            if w.ncols() == 0 {
                return Err(DesignError::MissingCovariates);
            }
            if w.nrows() != self.blocks.n() {
                return Err(DesignError::CovariateRows { expected: self.blocks.n(), found: w.nrows() });
            }
            if !(self.p_a > 0.0 && self.p_a <= 1.0) {
                return Err(DesignError::AcceptanceProbability(self.p_a));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignResult {
    #[serde(rename = "Z")]
    pub z: Vec<u8>,
    pub draws_used: usize,
    pub mahalanobis: Option<f64>,
    /// `None` without rerandomization; `Some(inf)` is serialized as null.
    pub threshold_a: Option<f64>,
}

fn check_bounds(blocks: &BlockStructure) -> Result<(), DesignError> {
    for m in 0..blocks.num_blocks() {
        let (treated, size) = (blocks.treated(m), blocks.size(m));
        if treated < 2 || treated + 2 > size {
            return Err(DesignError::Bounds { block: m + 1, treated, size });
        }
    }
    Ok(())
}

/// Uniform draw of `n1` treated among `n` units.
pub fn draw_complete(n: usize, n1: usize, rng: &mut Rng) -> Result<Vec<u8>, DesignError> {
    let blocks = BlockStructure::single(n, n1).map_err(|_| DesignError::Bounds { block: 1, treated: n1, size: n })?;
    draw_stratified(&blocks, rng)
}

/// Independent complete randomization inside every block.
pub fn draw_stratified(blocks: &BlockStructure, rng: &mut Rng) -> Result<Vec<u8>, DesignError> {
    check_bounds(blocks)?;
    let mut sampler = BlockSampler::new(blocks);
    let mut z = vec![0u8; blocks.n()];
    sampler.fill(rng, &mut z);
    Ok(z)
}

/// Reusable stratified sampler; avoids reallocating per draw.
#[derive(Debug, Clone)]
pub struct BlockSampler {
    pools: Vec<Vec<usize>>,
    treated: Vec<usize>,
}

impl BlockSampler {
    pub fn new(blocks: &BlockStructure) -> Self {
        Self {
            pools: (0..blocks.num_blocks()).map(|m| blocks.members(m).to_vec()).collect(),
            treated: (0..blocks.num_blocks()).map(|m| blocks.treated(m)).collect(),
        }
    }

    pub fn fill(&mut self, rng: &mut Rng, z: &mut [u8]) {
        z.iter_mut().for_each(|v| *v = 0);
        for (pool, &k) in self.pools.iter_mut().zip(&self.treated) {
            // pool order is whatever the last draw left; the partial shuffle
            // is uniform from any starting permutation
            rng.partial_shuffle(pool, k);
            for &i in &pool[..k] {
                z[i] = 1;
            }
        }
    }
}

/// Mahalanobis balance of the weighted design-covariate mean difference,
/// with covariance computed from the fixed finite population.
///
/// With a single block this is the usual complete-randomization statistic,
/// cov = n / (n1 n0) S²_W.
#[derive(Debug, Clone)]
pub struct BalanceCriterion {
    w: Array2<f64>,
    /// π_m (1/n_m1 + 1/n_m0) per unit
    treated_coef: Vec<f64>,
    /// -Σ_m π_m / n_m0 Σ_{i∈m} w_i
    offset: Vec<f64>,
    chol: Cholesky,
}

impl BalanceCriterion {
    pub fn new(w: ArrayView2<'_, f64>, blocks: &BlockStructure) -> Result<Self, DesignError> {
        let (n, k) = w.dim();
        if n != blocks.n() {
            return Err(DesignError::CovariateRows { expected: blocks.n(), found: n });
        }
        if k == 0 {
            return Err(DesignError::MissingCovariates);
        }
        let cov = design_covariance(w, blocks);
        let chol = Cholesky::factor(cov.view()).map_err(|e| match e {
            NumericsError::RankDeficient { pivot } => DesignError::RankDeficient { pivot },
            other => DesignError::Numerics(other),
        })?;
        let mut treated_coef = vec![0.0; n];
        let mut offset = vec![0.0; k];
        for m in 0..blocks.num_blocks() {
            let pi = blocks.weight(m);
            let (n1, n0) = (blocks.treated(m) as f64, blocks.control(m) as f64);
            let coef = pi * (1.0 / n1 + 1.0 / n0);
            for &i in blocks.members(m) {
                treated_coef[i] = coef;
                for j in 0..k {
                    offset[j] -= pi / n0 * w[[i, j]];
                }
            }
        }
        Ok(Self { w: w.to_owned(), treated_coef, offset, chol })
    }

    pub fn k(&self) -> usize {
        self.w.ncols()
    }

    /// τ̂_W = Σ_m π_m (W̄_m1 - W̄_m0).
    pub fn mean_difference(&self, z: &[u8]) -> Vec<f64> {
        let mut diff = self.offset.clone();
        for (i, &zi) in z.iter().enumerate() {
            if zi == 1 {
                let c = self.treated_coef[i];
                for (d, &v) in diff.iter_mut().zip(self.w.row(i)) {
                    *d += c * v;
                }
            }
        }
        diff
    }

    pub fn distance(&self, z: &[u8]) -> f64 {
        self.chol.quadratic_form(&self.mean_difference(z))
    }
}

/// cov(τ̂_W) = (1/n) Σ_m π_m S²_mW / {e_m (1 - e_m)}.
pub fn design_covariance(w: ArrayView2<'_, f64>, blocks: &BlockStructure) -> Array2<f64> {
    let k = w.ncols();
    let n = blocks.n() as f64;
    let mut cov = Array2::<f64>::zeros((k, k));
    for m in 0..blocks.num_blocks() {
        let members = blocks.members(m);
        let nm = members.len();
        if nm < 2 {
            continue;
        }
        let mut mean = vec![0.0; k];
        for &i in members {
            for j in 0..k {
                mean[j] += w[[i, j]];
            }
        }
        mean.iter_mut().for_each(|v| *v /= nm as f64);
        let e = blocks.propensity(m);
        let scale = blocks.weight(m) / (e * (1.0 - e)) / (nm as f64 - 1.0) / n;
        for &i in members {
            for a in 0..k {
                let da = w[[i, a]] - mean[a];
                for b in 0..=a {
                    cov[[a, b]] += scale * da * (w[[i, b]] - mean[b]);
                }
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            cov[[b, a]] = cov[[a, b]];
        }
    }
    cov
}

/// Ma(Z, W) for one assignment.
pub fn mahalanobis(z: &[u8], w: ArrayView2<'_, f64>, blocks: &BlockStructure) -> Result<f64, DesignError> {
    Ok(BalanceCriterion::new(w, blocks)?.distance(z))
}

/// Threshold `a` with asymptotic acceptance probability `p_a`: the χ²_k
/// quantile. `p_a = 1` gives +∞.
pub fn compute_threshold(p_a: f64, k: usize) -> Result<f64, DesignError> {
    if !(p_a > 0.0 && p_a <= 1.0) {
        return Err(DesignError::AcceptanceProbability(p_a));
    }
    if k == 0 {
        return Err(DesignError::MissingCovariates);
    }
    if p_a == 1.0 {
        return Ok(f64::INFINITY);
    }
    Ok(chi2_quantile(p_a, k as u32)?)
}

/// Prepared design: validated spec plus sampler and balance criterion.
#[derive(Debug, Clone)]
pub struct Randomizer {
    sampler: BlockSampler,
    balance: Option<(BalanceCriterion, f64)>,
    cap: usize,
    n: usize,
}

impl Randomizer {
    pub fn new(spec: &DesignSpec) -> Result<Self, DesignError> {
        spec.check()?;
        let balance = if spec.kind.rerandomizes() {
            let w = spec.w.as_ref().ok_or(DesignError::MissingCovariates)?;
            let criterion = BalanceCriterion::new(w.view(), &spec.blocks)?;
            let a = compute_threshold(spec.p_a, w.ncols())?;
            Some((criterion, a))
        } else {
            None
        };
        Ok(Self { sampler: BlockSampler::new(&spec.blocks), balance, cap: spec.draw_cap(), n: spec.blocks.n() })
    }

    pub fn threshold(&self) -> Option<f64> {
        self.balance.as_ref().map(|(_, a)| *a)
    }

    pub fn criterion(&self) -> Option<&BalanceCriterion> {
        self.balance.as_ref().map(|(c, _)| c)
    }

    /// Algorithm: draw from the base design until Ma <= a.
    pub fn draw(&mut self, rng: &mut Rng) -> Result<DesignResult, DesignError> {
        let mut z = vec![0u8; self.n];
        match &self.balance {
            None => {
                self.sampler.fill(rng, &mut z);
                Ok(DesignResult { z, draws_used: 1, mahalanobis: None, threshold_a: None })
            }
            Some((criterion, a)) => {
                for draw in 1..=self.cap {
                    self.sampler.fill(rng, &mut z);
                    let ma = criterion.distance(&z);
                    if ma <= *a {
                        return Ok(DesignResult {
                            z,
                            draws_used: draw,
                            mahalanobis: Some(ma),
                            threshold_a: Some(*a),
                        });
                    }
                }
                Err(DesignError::MaxDrawsExceeded { draws: self.cap })
            }
        }
    }
}

pub fn draw_rerandomized(spec: &DesignSpec, rng: &mut Rng) -> Result<DesignResult, DesignError> {
    Randomizer::new(spec)?.draw(rng)
}

/// Draws an assignment under any of the four designs.
pub fn draw(spec: &DesignSpec, rng: &mut Rng) -> Result<DesignResult, DesignError> {
    Randomizer::new(spec)?.draw(rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn code(z: &[u8]) -> usize {
        z.iter().enumerate().map(|(i, &v)| (v as usize) << i).sum()
    }

    #[test]
    fn complete_bounds() {
        let mut rng = Rng::new(1, 0);
        assert!(draw_complete(4, 4, &mut rng).is_err());
        assert!(draw_complete(4, 1, &mut rng).is_err());
        let z = draw_complete(10, 4, &mut rng).unwrap();
        assert_eq!(z.iter().filter(|&&v| v == 1).count(), 4);
    }

    #[test]
    fn complete_is_deterministic() {
        let a = draw_complete(20, 7, &mut Rng::new(5, 2)).unwrap();
        let b = draw_complete(20, 7, &mut Rng::new(5, 2)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn complete_is_uniform_over_six_assignments() {
        let draws = 60_000;
        let mut rng = Rng::new(11, 0);
        let mut counts = std::collections::HashMap::new();
        for _ in 0..draws {
            *counts.entry(code(&draw_complete(4, 2, &mut rng).unwrap())).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 6);
        let p = 1.0 / 6.0;
        let se = (p * (1.0 - p) / draws as f64).sqrt();
        for (_, c) in counts {
            assert!((c as f64 / draws as f64 - p).abs() <= 4.0 * se);
        }
    }

    #[test]
    fn stratified_is_uniform_over_36_assignments() {
        let blocks = BlockStructure::new(vec![0, 0, 0, 0, 1, 1, 1, 1], vec![2, 2]).unwrap();
        let draws = 360_000;
        let mut rng = Rng::new(12, 0);
        let mut sampler = BlockSampler::new(&blocks);
        let mut z = vec![0u8; 8];
        let mut counts = std::collections::HashMap::new();
        for _ in 0..draws {
            sampler.fill(&mut rng, &mut z);
            assert_eq!(z[..4].iter().filter(|&&v| v == 1).count(), 2);
            assert_eq!(z[4..].iter().filter(|&&v| v == 1).count(), 2);
            *counts.entry(code(&z)).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 36);
        let p = 1.0 / 36.0;
        let se = (p * (1.0 - p) / draws as f64).sqrt();
        for (_, c) in counts {
            assert!((c as f64 / draws as f64 - p).abs() <= 4.0 * se);
        }
    }

    #[test]
    fn single_block_stratified_matches_complete() {
        let blocks = BlockStructure::single(9, 4).unwrap();
        let a = draw_stratified(&blocks, &mut Rng::new(3, 3)).unwrap();
        let b = draw_complete(9, 4, &mut Rng::new(3, 3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn hand_computed_mahalanobis() {
        let w = array![[1.0], [2.0], [3.0], [4.0]];
        let blocks = BlockStructure::single(4, 2).unwrap();
        let cov = design_covariance(w.view(), &blocks);
        assert_abs_diff_eq!(cov[[0, 0]], 5.0 / 3.0, epsilon = 1e-14);
        let ma = mahalanobis(&[1, 1, 0, 0], w.view(), &blocks).unwrap();
        assert_abs_diff_eq!(ma, 2.4, epsilon = 1e-12);
    }

    #[test]
    fn mahalanobis_mean_difference_averages_to_zero() {
        let w = array![[1.0], [2.0], [3.0], [4.0]];
        let blocks = BlockStructure::single(4, 2).unwrap();
        let crit = BalanceCriterion::new(w.view(), &blocks).unwrap();
        let mut total = 0.0;
        for code in 0..16usize {
            let z: Vec<u8> = (0..4).map(|i| ((code >> i) & 1) as u8).collect();
            if z.iter().filter(|&&v| v == 1).count() == 2 {
                total += crit.mean_difference(&z)[0];
            }
        }
        assert_abs_diff_eq!(total, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn mirror_balanced_covariates_give_zero() {
        // duplicated rows, one copy in each arm
        let w = array![[1.0, 2.0], [1.0, 2.0], [-1.0, 0.5], [-1.0, 0.5], [3.0, -1.0], [3.0, -1.0]];
        let blocks = BlockStructure::single(6, 3).unwrap();
        let ma = mahalanobis(&[1, 0, 0, 1, 1, 0], w.view(), &blocks).unwrap();
        assert_abs_diff_eq!(ma, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn collinear_design_covariates_are_rank_deficient() {
        let w = array![[1.0, 2.0], [2.0, 4.0], [3.0, 6.0], [4.0, 8.0]];
        let blocks = BlockStructure::single(4, 2).unwrap();
        assert!(matches!(
            mahalanobis(&[1, 1, 0, 0], w.view(), &blocks),
            Err(DesignError::RankDeficient { pivot: 1 })
        ));
    }

    #[test]
    fn affine_invariance() {
        let mut rng = Rng::new(8, 1);
        let n = 30;
        let w = Array2::from_shape_fn((n, 3), |_| rng.standard_normal());
        let blocks = BlockStructure::new((0..n).map(|i| i / 10).collect(), vec![4, 5, 3]).unwrap();
        let map = array![[2.0, 0.3, -1.0], [0.0, 1.5, 0.2], [0.4, 0.0, -3.0]];
        let shift = array![5.0, -2.0, 10.0];
        let w2 = w.dot(&map) + &shift;
        for s in 0..5 {
            let z = draw_stratified(&blocks, &mut Rng::new(100, s)).unwrap();
            let a = mahalanobis(&z, w.view(), &blocks).unwrap();
            let b = mahalanobis(&z, w2.view(), &blocks).unwrap();
            assert_abs_diff_eq!(a, b, epsilon = 1e-8);
        }
    }

    #[test]
    fn thresholds() {
        assert!(compute_threshold(1.0, 3).unwrap().is_infinite());
        assert_abs_diff_eq!(compute_threshold(0.5, 2).unwrap(), 2.0 * 2f64.ln(), epsilon = 1e-12);
        assert!(compute_threshold(0.0, 2).is_err());
    }

    #[test]
    fn no_truncation_accepts_first_draw() {
        let w = array![[1.0], [2.0], [3.0], [4.0], [0.0], [7.0]];
        let spec = DesignSpec::complete(6, 3).unwrap().rerandomized(w, 1.0);
        let res = draw_rerandomized(&spec, &mut Rng::new(0, 0)).unwrap();
        assert_eq!(res.draws_used, 1);
        assert_eq!(res.threshold_a, Some(f64::INFINITY));
    }

    #[test]
    fn rerandomization_is_rejection_sampling() {
        // n = 4, W = (1,2,3,4): Ma is 2.4 for {1,2}/{3,4}, 0.6 for {1,3}/{2,4},
        // 0 for {1,4}/{2,3}. A threshold of 0.3 accepts exactly two assignments.
        let w = array![[1.0], [2.0], [3.0], [4.0]];
        let blocks = BlockStructure::single(4, 2).unwrap();
        let crit = BalanceCriterion::new(w.view(), &blocks).unwrap();
        let a = 0.3;
        let mut accepted = Vec::new();
        for code in 0..16usize {
            let z: Vec<u8> = (0..4).map(|i| ((code >> i) & 1) as u8).collect();
            if z.iter().filter(|&&v| v == 1).count() == 2 && crit.distance(&z) <= a {
                accepted.push(code);
            }
        }
        assert_eq!(accepted.len(), 2);

        // draw with p_a chosen so that the threshold is ~0.3, then check
        let p_a = crate::numerics::chi2_cdf(a, 1).unwrap();
        let spec = DesignSpec::complete(4, 2).unwrap().rerandomized(w, p_a);
        let mut randomizer = Randomizer::new(&spec).unwrap();
        assert_abs_diff_eq!(randomizer.threshold().unwrap(), a, epsilon = 1e-9);
        let draws = 100_000;
        let mut rng = Rng::new(77, 0);
        let mut counts = std::collections::HashMap::new();
        for _ in 0..draws {
            let res = randomizer.draw(&mut rng).unwrap();
            assert!(res.mahalanobis.unwrap() <= res.threshold_a.unwrap());
            *counts.entry(code(&res.z)).or_insert(0usize) += 1;
        }
        let mut keys: Vec<_> = counts.keys().copied().collect();
        keys.sort_unstable();
        assert_eq!(keys, accepted);
        let se = (0.25f64 / draws as f64).sqrt();
        for (_, c) in counts {
            assert!((c as f64 / draws as f64 - 0.5).abs() <= 4.0 * se);
        }
    }

    #[test]
    fn max_draws_is_an_error() {
        let w = array![[1.0], [2.0], [3.0], [4.0], [5.0], [6.0]];
        // tiny p_a with a cap of 1 draw: essentially never accepted
        let spec = DesignSpec::complete(6, 3).unwrap().rerandomized(w, 1e-9).with_max_draws(1);
        let mut rng = Rng::new(0, 0);
        assert_eq!(draw_rerandomized(&spec, &mut rng), Err(DesignError::MaxDrawsExceeded { draws: 1 }));
    }

    #[test]
    fn spec_checks() {
        let blocks = BlockStructure::new(vec![0, 0, 0, 0, 1, 1, 1, 1], vec![2, 2]).unwrap();
        let mut spec = DesignSpec::stratified(blocks);
        spec.kind = DesignKind::Complete;
        assert_eq!(spec.check(), Err(DesignError::NotSingleBlock(2)));
        spec.kind = DesignKind::StratifiedRerandomized;
        assert_eq!(spec.check(), Err(DesignError::MissingCovariates));
    }
}
