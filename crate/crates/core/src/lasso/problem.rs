use ndarray::{Array2, ShapeBuilder};
use serde::{Deserialize, Serialize};

use crate::data::Observed;

/// Weighted Lasso objective
/// `(1/2) Σ v_i (r_i - D_iᵀβ)² + λ ‖β‖₁` on one arm's units.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedLassoProblem {
    pub response: Vec<f64>,
    /// n_z × p, column-major.
    pub predictors: Array2<f64>,
    pub weights: Vec<f64>,
    pub lambda: f64,
}

impl WeightedLassoProblem {
    pub fn new(response: Vec<f64>, predictors: Array2<f64>, weights: Vec<f64>, lambda: f64) -> Self {
        assert_eq!(response.len(), predictors.nrows(), "response and predictor rows differ");
        assert_eq!(weights.len(), predictors.nrows(), "weights and predictor rows differ");
        assert!(weights.iter().all(|&v| v >= 0.0), "observation weights must be nonnegative");
        assert!(weights.iter().sum::<f64>() > 0.0, "observation weights sum to zero");
        // solver wants contiguous columns
        let predictors = if predictors.t().is_standard_layout() {
            predictors
        } else {
            let mut f = Array2::zeros(predictors.raw_dim().f());
            f.assign(&predictors);
            f
        };
        Self { response, predictors, weights, lambda }
    }

    pub fn n(&self) -> usize {
        self.response.len()
    }

    pub fn p(&self) -> usize {
        self.predictors.ncols()
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }
}

/// Which Lasso-adjusted estimator a problem feeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Adjustment {
    /// Per-arm block-centered regression, weights π_m / (n_mz - 1).
    Arm,
    /// Projection coefficient regression with the ω, ω_Y, ω_X weights.
    Projection,
}

#[derive(Debug, Clone)]
struct GroupStats {
    mean_y: f64,
    mean_x: Vec<f64>,
    weight: f64,
    sqrt_wy: f64,
    sqrt_wx: f64,
}

/// Block-arm centering statistics and weights for one arm, fitted on a
/// subset of that arm's units (all of them, or a CV training fold).
#[derive(Debug, Clone)]
pub(crate) struct ArmTransform {
    arm: u8,
    groups: Vec<GroupStats>,
}

impl ArmTransform {
    /// `keep(unit)` selects the fitting units among the arm.
    pub(crate) fn fit(obs: &Observed<'_>, arm: u8, kind: Adjustment, keep: impl Fn(usize) -> bool) -> Self {
        let p = obs.p();
        let blocks = obs.blocks;
        let groups = (0..blocks.num_blocks())
            .map(|m| {
                let units: Vec<usize> = obs.group(m, arm).iter().copied().filter(|&i| keep(i)).collect();
                let count = units.len();
                let mut mean_x = vec![0.0; p];
                let mut mean_y = 0.0;
                if count > 0 {
                    for &i in &units {
                        mean_y += obs.y[i];
                        for (acc, &v) in mean_x.iter_mut().zip(obs.x.row(i)) {
                            *acc += v;
                        }
                    }
                    mean_y /= count as f64;
                    mean_x.iter_mut().for_each(|v| *v /= count as f64);
                }
                // a lone unit centers to zero and contributes nothing
                let dof = (count.max(2) - 1) as f64;
                let (weight, sqrt_wy, sqrt_wx) = match kind {
                    Adjustment::Arm => (blocks.weight(m) / dof, 1.0, 1.0),
                    Adjustment::Projection => {
                        let e = blocks.arm_propensity(m, arm);
                        (
                            blocks.size(m) as f64 / dof,
                            ((1.0 - e) / e).sqrt(),
                            (1.0 / (e * (1.0 - e))).sqrt(),
                        )
                    }
                };
                GroupStats { mean_y, mean_x, weight, sqrt_wy, sqrt_wx }
            })
            .collect();
        Self { arm, groups }
    }

    /// Transformed rows for `units` (all in this arm), as (r, D, v).
    pub(crate) fn rows(&self, obs: &Observed<'_>, units: &[usize]) -> (Vec<f64>, Array2<f64>, Vec<f64>) {
        let p = obs.p();
        let mut d = Array2::<f64>::zeros((units.len(), p).f());
        let mut r = Vec::with_capacity(units.len());
        let mut v = Vec::with_capacity(units.len());
        for (row, &i) in units.iter().enumerate() {
            debug_assert_eq!(obs.z[i], self.arm);
            let g = &self.groups[obs.blocks.block_of(i)];
            r.push(g.sqrt_wy * (obs.y[i] - g.mean_y));
            v.push(g.weight);
            let xi = obs.x.row(i);
            for j in 0..p {
                d[[row, j]] = g.sqrt_wx * (xi[j] - g.mean_x[j]);
            }
        }
        (r, d, v)
    }
}

impl Adjustment {
    pub fn build(self, obs: &Observed<'_>, arm: u8, lambda: f64) -> WeightedLassoProblem {
        let transform = ArmTransform::fit(obs, arm, self, |_| true);
        let units = obs.arm_units(arm);
        let (r, d, v) = transform.rows(obs, &units);
        WeightedLassoProblem { response: r, predictors: d, weights: v, lambda }
    }
}

/// Problem whose minimizer is the arm-z Lasso adjustment vector.
pub fn build_arm_problem(obs: &Observed<'_>, arm: u8, lambda: f64) -> WeightedLassoProblem {
    Adjustment::Arm.build(obs, arm, lambda)
}

/// Problem whose minimizer is the arm-z component of the projection
/// coefficient.
pub fn build_projection_problem(obs: &Observed<'_>, arm: u8, lambda: f64) -> WeightedLassoProblem {
    Adjustment::Projection.build(obs, arm, lambda)
}
