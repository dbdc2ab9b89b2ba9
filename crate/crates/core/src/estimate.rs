//! Point estimators, conservative variance estimators and confidence
//! intervals for the average treatment effect.
//!
//! Variances are reported on the scale of τ̂ itself, i.e. σ̂²/n.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, Observed};
use crate::design::design_covariance;
use crate::lasso::{cv_select, Adjustment, CvOptions, LassoError, LassoFit};
use crate::numerics::{chi2_cdf, normal_quantile, Cholesky, NumericsError, Rng};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimateError {
    #[error("degrees of freedom exhausted: {units} units with {selected} selected covariates")]
    DegreesOfFreedomExhausted { units: usize, selected: usize },
    #[error("alpha must lie in (0, 1), got {0}")]
    Alpha(f64),
    #[error("rerandomization threshold must be positive, got {0}")]
    Threshold(f64),
    #[error("coefficient vector has length {found}, expected {expected}")]
    Coefficients { expected: usize, found: usize },
    #[error("design covariates have {found} rows, expected {expected}")]
    CovariateRows { expected: usize, found: usize },
    #[error(transparent)]
    Lasso(#[from] LassoError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Unadj,
    Lasso,
    Lasso2,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Unadj => "unadj",
            Method::Lasso => "lasso",
            Method::Lasso2 => "lasso2",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Pieces of the rerandomization-aware variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerandVarianceParts {
    pub v_wy_hat: Vec<f64>,
    pub v_ww: Vec<Vec<f64>>,
    pub r2_hat: f64,
    pub v_ka: f64,
    pub threshold_a: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub method: Method,
    pub tau_hat: f64,
    /// Estimated variance of `tau_hat`.
    pub var_hat: f64,
    pub ci: (f64, f64),
    pub alpha: f64,
    /// Selected covariates: `[treated, control]` for lasso, `[combined]`
    /// for lasso2, empty for unadj.
    pub s_hat: Vec<usize>,
    /// Chosen λ, in the same order as `s_hat`.
    pub lambda: Vec<f64>,
    pub rerand_adjusted: bool,
    /// Per-block residual variances `[control, treated]`; raw outcome
    /// variances for unadj.
    pub residual_variance: Vec<[f64; 2]>,
    pub rerand_parts: Option<RerandVarianceParts>,
}

impl EstimateReport {
    pub const CSV_HEADER: &'static str = "method,tau_hat,var_hat,ci_lo,ci_hi,alpha,s_hat,rerand_adjusted";

    /// One CSV line matching [`Self::CSV_HEADER`]; `s_hat` entries are
    /// joined with `;`.
    pub fn csv_line(&self) -> String {
        let s_hat: Vec<String> = self.s_hat.iter().map(usize::to_string).collect();
        format!(
            "{},{},{},{},{},{},{},{}",
            self.method,
            crate::io::format_f64(self.tau_hat),
            crate::io::format_f64(self.var_hat),
            crate::io::format_f64(self.ci.0),
            crate::io::format_f64(self.ci.1),
            self.alpha,
            s_hat.join(";"),
            self.rerand_adjusted
        )
    }
}

/// τ̂ ∓ q_{α/2} √var.
pub fn confidence_interval(tau_hat: f64, var_hat: f64, alpha: f64) -> Result<(f64, f64), EstimateError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(EstimateError::Alpha(alpha));
    }
    let q = normal_quantile(1.0 - alpha / 2.0)?;
    let half = q * var_hat.max(0.0).sqrt();
    Ok((tau_hat - half, tau_hat + half))
}

/// Means and sample variances of a scalar within each block-arm, `[control, treated]`.
fn block_arm_moments(obs: &Observed<'_>, value: impl Fn(usize) -> f64) -> Vec<[(f64, f64); 2]> {
    (0..obs.blocks.num_blocks())
        .map(|m| {
            [0u8, 1].map(|z| {
                let g = obs.group(m, z);
                let k = g.len() as f64;
                let mean = g.iter().map(|&i| value(i)).sum::<f64>() / k;
                let ss = g.iter().map(|&i| (value(i) - mean).powi(2)).sum::<f64>();
                (mean, ss / (k - 1.0))
            })
        })
        .collect()
}

/// Σ_m π_m {s²_m(1)/e_m + s²_m(0)/(1 - e_m)} with per-arm multipliers.
fn neyman_sum(obs: &Observed<'_>, moments: &[[(f64, f64); 2]], factor: [f64; 2]) -> f64 {
    moments
        .iter()
        .enumerate()
        .map(|(m, mo)| {
            let e = obs.blocks.propensity(m);
            obs.blocks.weight(m) * (factor[1] * mo[1].1 / e + factor[0] * mo[0].1 / (1.0 - e))
        })
        .sum()
}

fn difference_in_means(obs: &Observed<'_>, moments: &[[(f64, f64); 2]]) -> f64 {
    moments
        .iter()
        .enumerate()
        .map(|(m, mo)| obs.blocks.weight(m) * (mo[1].0 - mo[0].0))
        .sum()
}

fn variances(moments: &[[(f64, f64); 2]]) -> Vec<[f64; 2]> {
    moments.iter().map(|mo| [mo[0].1, mo[1].1]).collect()
}

/// τ̂_unadj = Σ_m π_m (Ȳ_m1 - Ȳ_m0).
pub fn tau_unadj(obs: &Observed<'_>) -> f64 {
    difference_in_means(obs, &block_arm_moments(obs, |i| obs.y[i]))
}

/// σ̂²_unadj on the √n scale.
fn sigma2_unadj(obs: &Observed<'_>) -> f64 {
    neyman_sum(obs, &block_arm_moments(obs, |i| obs.y[i]), [1.0, 1.0])
}

/// σ̂²_unadj / n.
pub fn var_unadj(obs: &Observed<'_>) -> f64 {
    sigma2_unadj(obs) / obs.n() as f64
}

pub fn unadj_report(obs: &Observed<'_>, alpha: f64) -> Result<EstimateReport, EstimateError> {
    let moments = block_arm_moments(obs, |i| obs.y[i]);
    let tau_hat = difference_in_means(obs, &moments);
    let var_hat = neyman_sum(obs, &moments, [1.0, 1.0]) / obs.n() as f64;
    Ok(EstimateReport {
        method: Method::Unadj,
        tau_hat,
        var_hat,
        ci: confidence_interval(tau_hat, var_hat, alpha)?,
        alpha,
        s_hat: Vec::new(),
        lambda: Vec::new(),
        rerand_adjusted: false,
        residual_variance: variances(&moments),
        rerand_parts: None,
    })
}

/// x_iᵀβ for every unit (zero coefficients skipped).
fn linear_predictor(obs: &Observed<'_>, beta: &[f64]) -> Result<Vec<f64>, EstimateError> {
    if beta.len() != obs.p() {
        return Err(EstimateError::Coefficients { expected: obs.p(), found: beta.len() });
    }
    let mut out = vec![0.0; obs.n()];
    for (j, &b) in beta.iter().enumerate() {
        if b != 0.0 {
            for (o, &x) in out.iter_mut().zip(obs.x.column(j)) {
                *o += x * b;
            }
        }
    }
    Ok(out)
}

fn nonzeros(beta: &[f64]) -> usize {
    beta.iter().filter(|b| **b != 0.0).count()
}

/// Lasso-adjusted estimator from per-arm fits of the block-centered
/// problems.
pub fn tau_lasso(
    obs: &Observed<'_>,
    fit1: &LassoFit,
    fit0: &LassoFit,
    alpha: f64,
) -> Result<EstimateReport, EstimateError> {
    let betas = [&fit0.beta, &fit1.beta];
    let s_hat = [nonzeros(&fit0.beta), nonzeros(&fit1.beta)];
    let mut factor = [0.0; 2];
    for z in 0..2 {
        let units = obs.arm_size(z as u8);
        if units <= s_hat[z] + 1 {
            return Err(EstimateError::DegreesOfFreedomExhausted { units, selected: s_hat[z] });
        }
        factor[z] = units as f64 / (units - s_hat[z] - 1) as f64;
    }
    let pred = [linear_predictor(obs, betas[0])?, linear_predictor(obs, betas[1])?];
    // Ȳ_mz - (x̄_mz - x̄_m)ᵀβ_z is the block-arm mean of Y_i - (x_i - x̄_m)ᵀβ_z
    let mut tau_hat = 0.0;
    for m in 0..obs.blocks.num_blocks() {
        let members = obs.blocks.members(m);
        let mut adjusted = [0.0; 2];
        for z in 0..2 {
            let block_mean = members.iter().map(|&i| pred[z][i]).sum::<f64>() / members.len() as f64;
            let g = obs.group(m, z as u8);
            adjusted[z] = g.iter().map(|&i| obs.y[i] - pred[z][i] + block_mean).sum::<f64>() / g.len() as f64;
        }
        tau_hat += obs.blocks.weight(m) * (adjusted[1] - adjusted[0]);
    }
    let residual = |i: usize| obs.y[i] - pred[obs.z[i] as usize][i];
    let moments = block_arm_moments(obs, residual);
    let var_hat = neyman_sum(obs, &moments, factor) / obs.n() as f64;
    Ok(EstimateReport {
        method: Method::Lasso,
        tau_hat,
        var_hat,
        ci: confidence_interval(tau_hat, var_hat, alpha)?,
        alpha,
        s_hat: vec![s_hat[1], s_hat[0]],
        lambda: vec![fit1.lambda, fit0.lambda],
        rerand_adjusted: false,
        residual_variance: variances(&moments),
        rerand_parts: None,
    })
}

/// Projection estimator from the two arm components of γ̂.
pub fn tau_lasso2(
    obs: &Observed<'_>,
    gfit1: &LassoFit,
    gfit0: &LassoFit,
    alpha: f64,
) -> Result<EstimateReport, EstimateError> {
    if gfit1.beta.len() != gfit0.beta.len() {
        return Err(EstimateError::Coefficients { expected: gfit1.beta.len(), found: gfit0.beta.len() });
    }
    let gamma: Vec<f64> = gfit1.beta.iter().zip(&gfit0.beta).map(|(a, b)| a + b).collect();
    let s_hat = nonzeros(&gamma);
    let n = obs.n();
    if n <= s_hat + 1 {
        return Err(EstimateError::DegreesOfFreedomExhausted { units: n, selected: s_hat });
    }
    let pred = linear_predictor(obs, &gamma)?;
    let y_moments = block_arm_moments(obs, |i| obs.y[i]);
    let x_moments = block_arm_moments(obs, |i| pred[i]);
    // τ̂_Xᵀγ̂ is the weighted difference in means of x_iᵀγ̂
    let tau_hat = difference_in_means(obs, &y_moments) - difference_in_means(obs, &x_moments);
    let moments = block_arm_moments(obs, |i| obs.y[i] - pred[i]);
    let factor = n as f64 / (n - s_hat - 1) as f64;
    let var_hat = factor * neyman_sum(obs, &moments, [1.0, 1.0]) / n as f64;
    Ok(EstimateReport {
        method: Method::Lasso2,
        tau_hat,
        var_hat,
        ci: confidence_interval(tau_hat, var_hat, alpha)?,
        alpha,
        s_hat: vec![s_hat],
        lambda: vec![gfit1.lambda, gfit0.lambda],
        rerand_adjusted: false,
        residual_variance: variances(&moments),
        rerand_parts: None,
    })
}

/// v_{k,a} = P(χ²_{k+2} ≤ a) / P(χ²_k ≤ a); 1 when a is infinite.
pub fn truncation_factor(k: usize, a: f64) -> Result<f64, EstimateError> {
    if !(a > 0.0) {
        return Err(EstimateError::Threshold(a));
    }
    if a.is_infinite() {
        return Ok(1.0);
    }
    Ok(chi2_cdf(a, k as u32 + 2)? / chi2_cdf(a, k as u32)?)
}

/// Conservative variance of τ̂_unadj under (stratified) rerandomization
/// with threshold `a`, as σ̂²_unadj|M / n.
pub fn var_unadj_rerand(
    obs: &Observed<'_>,
    w: ArrayView2<'_, f64>,
    a: f64,
) -> Result<(f64, RerandVarianceParts), EstimateError> {
    let n = obs.n();
    if w.nrows() != n {
        return Err(EstimateError::CovariateRows { expected: n, found: w.nrows() });
    }
    let k = w.ncols();
    let v_ka = truncation_factor(k, a)?;
    let sigma2 = sigma2_unadj(obs);

    let mut v_wy = vec![0.0; k];
    for m in 0..obs.blocks.num_blocks() {
        for z in [0u8, 1] {
            let g = obs.group(m, z);
            let cnt = g.len() as f64;
            let y_mean = g.iter().map(|&i| obs.y[i]).sum::<f64>() / cnt;
            let scale = obs.blocks.weight(m) / obs.blocks.arm_propensity(m, z) / (cnt - 1.0);
            for (j, acc) in v_wy.iter_mut().enumerate() {
                let w_mean = g.iter().map(|&i| w[[i, j]]).sum::<f64>() / cnt;
                let s: f64 = g.iter().map(|&i| (w[[i, j]] - w_mean) * (obs.y[i] - y_mean)).sum();
                *acc += scale * s;
            }
        }
    }
    let v_ww: Array2<f64> = design_covariance(w, obs.blocks) * n as f64;
    let chol = Cholesky::factor(v_ww.view())?;
    let quad = chol.quadratic_form(&v_wy);
    let r2_hat = if sigma2 > 0.0 { (quad / sigma2).clamp(0.0, 1.0) } else { 0.0 };
    let sigma2_m = sigma2 * (1.0 - (1.0 - v_ka) * r2_hat);
    let parts = RerandVarianceParts {
        v_wy_hat: v_wy,
        v_ww: v_ww.outer_iter().map(|r| r.to_vec()).collect(),
        r2_hat,
        v_ka,
        threshold_a: a,
    };
    Ok((sigma2_m / n as f64, parts))
}

/// Unadjusted report with the rerandomization-aware variance.
pub fn unadj_rerand_report(
    obs: &Observed<'_>,
    w: ArrayView2<'_, f64>,
    a: f64,
    alpha: f64,
) -> Result<EstimateReport, EstimateError> {
    let mut report = unadj_report(obs, alpha)?;
    let (var_hat, parts) = var_unadj_rerand(obs, w, a)?;
    report.var_hat = var_hat;
    report.ci = confidence_interval(report.tau_hat, var_hat, alpha)?;
    report.rerand_adjusted = true;
    report.rerand_parts = Some(parts);
    Ok(report)
}

/// Cross-validated per-arm fits `(treated, control)`. The treated arm
/// uses the first draws of `rng`.
pub fn fit_arms(
    obs: &Observed<'_>,
    adjustment: Adjustment,
    options: &CvOptions,
    rng: &mut Rng,
) -> Result<(LassoFit, LassoFit), EstimateError> {
    let fit1 = cv_select(obs, 1, adjustment, options, rng)?;
    let fit0 = cv_select(obs, 0, adjustment, options, rng)?;
    Ok((fit1, fit0))
}

/// τ̂_lasso with λ chosen by cross-validation in each arm.
pub fn lasso_report(
    obs: &Observed<'_>,
    alpha: f64,
    options: &CvOptions,
    rng: &mut Rng,
) -> Result<EstimateReport, EstimateError> {
    let (fit1, fit0) = fit_arms(obs, Adjustment::Arm, options, rng)?;
    tau_lasso(obs, &fit1, &fit0, alpha)
}

/// τ̂_lasso2 with λ chosen by cross-validation in each arm.
pub fn lasso2_report(
    obs: &Observed<'_>,
    alpha: f64,
    options: &CvOptions,
    rng: &mut Rng,
) -> Result<EstimateReport, EstimateError> {
    let (fit1, fit0) = fit_arms(obs, Adjustment::Projection, options, rng)?;
    tau_lasso2(obs, &fit1, &fit0, alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{BlockStructure, PotentialOutcomeTable};
    use crate::lasso::{build_arm_problem, build_projection_problem, solve};
    use crate::numerics::{chi2_quantile, solve_spd};
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array1};

    fn assignments_of(n: usize, n1: usize) -> Vec<Vec<u8>> {
        (0u32..1 << n)
            .filter(|mask| mask.count_ones() as usize == n1)
            .map(|mask| (0..n).map(|i| ((mask >> i) & 1) as u8).collect())
            .collect()
    }

    fn zero_fit(p: usize) -> LassoFit {
        LassoFit::null(p, 0.0)
    }

    #[test]
    fn constant_effect_every_assignment() {
        let table = PotentialOutcomeTable::new(vec![1.0; 4], vec![0.0; 4]);
        let x = Array2::<f64>::zeros((4, 1));
        let blocks = BlockStructure::single(4, 2).unwrap();
        for z in assignments_of(4, 2) {
            let y = table.observe(&z);
            let obs = Observed::new(x.view(), &blocks, &z, &y).unwrap();
            assert_eq!(tau_unadj(&obs), 1.0);
            assert_eq!(var_unadj(&obs), 0.0);
        }
    }

    #[test]
    fn two_block_hand_value() {
        // block 1: treated (1,3) control (0,2); block 2 (size 6): treated (5,7,9) control (4,4,4)
        let block_of = vec![0, 0, 0, 0, 1, 1, 1, 1, 1, 1];
        let z = vec![1, 1, 0, 0, 1, 1, 1, 0, 0, 0];
        let y = vec![1.0, 3.0, 0.0, 2.0, 5.0, 7.0, 9.0, 4.0, 4.0, 4.0];
        let x = Array2::<f64>::zeros((10, 1));
        let blocks = BlockStructure::from_assignment(block_of, &z).unwrap();
        let obs = Observed::new(x.view(), &blocks, &z, &y).unwrap();
        assert_abs_diff_eq!(tau_unadj(&obs), 0.4 * (2.0 - 1.0) + 0.6 * (7.0 - 4.0), epsilon = 1e-15);
        // s² = 2, 2 in block 1; 4, 0 in block 2; e = 1/2 both
        let sigma2 = 0.4 * (2.0 / 0.5 + 2.0 / 0.5) + 0.6 * (4.0 / 0.5);
        assert_abs_diff_eq!(var_unadj(&obs), sigma2 / 10.0, epsilon = 1e-15);
    }

    #[test]
    fn enumeration_unbiased_and_conservative() {
        let y1 = vec![3.0, 1.5, 4.0, 0.5, 7.0, 2.0, 5.5, 6.0];
        let y0 = vec![1.0, 1.0, 2.5, 0.0, 3.0, 2.5, 1.0, 4.0];
        let table = PotentialOutcomeTable::new(y1, y0);
        let blocks = BlockStructure::new(vec![0, 0, 0, 0, 1, 1, 1, 1], vec![2, 2]).unwrap();
        let x = Array2::<f64>::zeros((8, 1));
        let per_block = assignments_of(4, 2);
        let (mut taus, mut vars) = (Vec::new(), Vec::new());
        for a in &per_block {
            for b in &per_block {
                let z: Vec<u8> = a.iter().chain(b).copied().collect();
                let y = table.observe(&z);
                let obs = Observed::new(x.view(), &blocks, &z, &y).unwrap();
                taus.push(tau_unadj(&obs));
                vars.push(var_unadj(&obs));
            }
        }
        assert_eq!(taus.len(), 36);
        let mean = taus.iter().sum::<f64>() / 36.0;
        assert_abs_diff_eq!(mean, table.tau, epsilon = 1e-14);
        let true_var = taus.iter().map(|t| (t - table.tau).powi(2)).sum::<f64>() / 36.0;
        let mean_var = vars.iter().sum::<f64>() / 36.0;
        assert!(true_var <= mean_var + 1e-14, "{true_var} > {mean_var}");
    }

    fn synthetic(seed: u64, n: usize, p: usize, block: usize, treated: usize) -> (Array2<f64>, BlockStructure, Vec<u8>, Vec<f64>) {
        let mut rng = Rng::new(seed, 0);
        let x = Array2::from_shape_fn((n, p), |_| rng.standard_normal());
        let block_of: Vec<usize> = (0..n).map(|i| i / block).collect();
        let z: Vec<u8> = (0..n).map(|i| ((i % block) < treated) as u8).collect();
        let y: Vec<f64> = (0..n)
            .map(|i| 2.0 * x[[i, 0]] - x[[i, 1]] + z[i] as f64 + (i / block) as f64 + 0.5 * rng.standard_normal())
            .collect();
        let blocks = BlockStructure::from_assignment(block_of, &z).unwrap();
        (x, blocks, z, y)
    }

    #[test]
    fn null_adjustment_identity() {
        let (x, blocks, z, y) = synthetic(1, 40, 3, 10, 4);
        let obs = Observed::new(x.view(), &blocks, &z, &y).unwrap();
        let unadj = unadj_report(&obs, 0.05).unwrap();
        let lasso = tau_lasso(&obs, &zero_fit(3), &zero_fit(3), 0.05).unwrap();
        assert_eq!(lasso.tau_hat, unadj.tau_hat);
        let moments = block_arm_moments(&obs, |i| y[i]);
        let (n1, n0) = (obs.arm_size(1) as f64, obs.arm_size(0) as f64);
        let expected = neyman_sum(&obs, &moments, [n0 / (n0 - 1.0), n1 / (n1 - 1.0)]) / 40.0;
        assert_abs_diff_eq!(lasso.var_hat, expected, epsilon = 1e-15);
        let lasso2 = tau_lasso2(&obs, &zero_fit(3), &zero_fit(3), 0.05).unwrap();
        assert_eq!(lasso2.tau_hat, unadj.tau_hat);
        assert_abs_diff_eq!(lasso2.var_hat, unadj.var_hat * 40.0 / 39.0, epsilon = 1e-15);
    }

    #[test]
    fn balanced_covariates_leave_lasso2_at_unadj() {
        // x mirrors across arms within each block, so τ̂_X = 0
        let x = array![[1.0], [2.0], [1.0], [2.0], [5.0], [-1.0], [5.0], [-1.0]];
        let z = vec![1, 1, 0, 0, 1, 1, 0, 0];
        let y = vec![3.0, 1.0, 0.0, 2.0, 6.0, 2.0, 1.0, 1.0];
        let blocks = BlockStructure::from_assignment(vec![0, 0, 0, 0, 1, 1, 1, 1], &z).unwrap();
        let obs = Observed::new(x.view(), &blocks, &z, &y).unwrap();
        let mut g = zero_fit(1);
        g.beta = vec![3.7];
        let r = tau_lasso2(&obs, &g, &zero_fit(1), 0.05).unwrap();
        assert_abs_diff_eq!(r.tau_hat, tau_unadj(&obs), epsilon = 1e-14);
    }

    #[test]
    fn perfect_linear_fit_has_no_residual_variance() {
        let n = 20;
        let x = Array2::from_shape_fn((n, 2), |(i, j)| ((i * (j + 3)) % 7) as f64 + 0.1 * i as f64);
        let z: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let y: Vec<f64> = (0..n).map(|i| 1.5 * x[[i, 0]] - 0.5 * x[[i, 1]] + 2.0 * z[i] as f64).collect();
        let blocks = BlockStructure::from_assignment(vec![0; n], &z).unwrap();
        let obs = Observed::new(x.view(), &blocks, &z, &y).unwrap();
        let f1 = solve(&build_arm_problem(&obs, 1, 1e-12)).unwrap();
        let f0 = solve(&build_arm_problem(&obs, 0, 1e-12)).unwrap();
        let r = tau_lasso(&obs, &f1, &f0, 0.05).unwrap();
        assert!(r.var_hat < 1e-12, "{}", r.var_hat);
        assert_abs_diff_eq!(r.tau_hat, 2.0, epsilon = 1e-6);
    }

    #[test]
    fn location_scale_equivariance() {
        let (x, blocks, z, y) = synthetic(2, 40, 4, 10, 5);
        let (c, d) = (-2.5, 7.0);
        let ys: Vec<f64> = y.iter().map(|v| c * v + d).collect();
        let obs = Observed::new(x.view(), &blocks, &z, &y).unwrap();
        let obs_s = Observed::new(x.view(), &blocks, &z, &ys).unwrap();
        let lambda = 0.05;
        let check = |a: &EstimateReport, b: &EstimateReport| {
            assert_abs_diff_eq!(b.tau_hat, c * a.tau_hat, epsilon = 1e-7);
            assert_abs_diff_eq!(b.var_hat, c * c * a.var_hat, epsilon = 1e-7);
        };
        check(&unadj_report(&obs, 0.05).unwrap(), &unadj_report(&obs_s, 0.05).unwrap());
        let fits = |o: &Observed<'_>, l: f64, builder: fn(&Observed<'_>, u8, f64) -> crate::lasso::WeightedLassoProblem| {
            (solve(&builder(o, 1, l)).unwrap(), solve(&builder(o, 0, l)).unwrap())
        };
        let (a1, a0) = fits(&obs, lambda, build_arm_problem);
        let (b1, b0) = fits(&obs_s, c.abs() * lambda, build_arm_problem);
        check(&tau_lasso(&obs, &a1, &a0, 0.05).unwrap(), &tau_lasso(&obs_s, &b1, &b0, 0.05).unwrap());
        let (a1, a0) = fits(&obs, lambda, build_projection_problem);
        let (b1, b0) = fits(&obs_s, c.abs() * lambda, build_projection_problem);
        check(&tau_lasso2(&obs, &a1, &a0, 0.05).unwrap(), &tau_lasso2(&obs_s, &b1, &b0, 0.05).unwrap());
    }

    #[test]
    fn projection_components_combine_to_weighted_ols() {
        let (x, blocks, z, y) = synthetic(3, 60, 3, 60, 30);
        let obs = Observed::new(x.view(), &blocks, &z, &y).unwrap();
        let ols = |arm: u8| {
            let units = obs.arm_units(arm);
            let k = units.len() as f64;
            let xm: Vec<f64> = (0..3).map(|j| units.iter().map(|&i| x[[i, j]]).sum::<f64>() / k).collect();
            let ym = units.iter().map(|&i| y[i]).sum::<f64>() / k;
            let sxx = Array2::from_shape_fn((3, 3), |(a, b)| {
                units.iter().map(|&i| (x[[i, a]] - xm[a]) * (x[[i, b]] - xm[b])).sum::<f64>()
            });
            let sxy = Array1::from_shape_fn(3, |a| units.iter().map(|&i| (x[[i, a]] - xm[a]) * (y[i] - ym)).sum::<f64>());
            solve_spd(sxx.view(), sxy.view()).unwrap()
        };
        let (b1, b0) = (ols(1), ols(0));
        let g1 = solve(&build_projection_problem(&obs, 1, 0.0)).unwrap();
        let g0 = solve(&build_projection_problem(&obs, 0, 0.0)).unwrap();
        for j in 0..3 {
            assert_abs_diff_eq!(g1.beta[j] + g0.beta[j], 0.5 * b1[j] + 0.5 * b0[j], epsilon = 1e-6);
        }
    }

    #[test]
    fn degrees_of_freedom_exhausted() {
        let (x, blocks, z, y) = synthetic(4, 8, 3, 4, 2);
        let obs = Observed::new(x.view(), &blocks, &z, &y).unwrap();
        let mut f = zero_fit(3);
        f.beta = vec![1.0, 1.0, 1.0];
        assert_eq!(
            tau_lasso(&obs, &f, &zero_fit(3), 0.05),
            Err(EstimateError::DegreesOfFreedomExhausted { units: 4, selected: 3 })
        );
    }

    #[test]
    fn interval_arithmetic() {
        assert_eq!(confidence_interval(1.5, 0.0, 0.05).unwrap(), (1.5, 1.5));
        let (lo, hi) = confidence_interval(0.0, 4.0, 0.05).unwrap();
        assert_abs_diff_eq!(hi - lo, 2.0 * 1.959964 * 2.0, epsilon = 1e-5);
        assert!(confidence_interval(0.0, 1.0, 1.5).is_err());
    }

    fn rerand_fixture(y: Vec<f64>, w: Array2<f64>) -> (Array2<f64>, Array2<f64>, BlockStructure, Vec<u8>, Vec<f64>) {
        let z = vec![1, 1, 1, 0, 0, 0];
        let blocks = BlockStructure::from_assignment(vec![0; 6], &z).unwrap();
        (Array2::zeros((6, 1)), w, blocks, z, y)
    }

    #[test]
    fn uncorrelated_design_covariate_leaves_variance() {
        // within each arm W is orthogonal to Y after centering
        let w = Array2::from_shape_vec((6, 1), vec![1.0, -2.0, 1.0, 0.0, 3.0, 0.0]).unwrap();
        let (x, w, blocks, z, y) = rerand_fixture(vec![1.0, 2.0, 3.0, 5.0, 7.0, 9.0], w);
        let obs = Observed::new(x.view(), &blocks, &z, &y).unwrap();
        let a = chi2_quantile(0.001, 1).unwrap();
        let (v, parts) = var_unadj_rerand(&obs, w.view(), a).unwrap();
        assert_eq!(parts.r2_hat, 0.0);
        assert_abs_diff_eq!(v, var_unadj(&obs), epsilon = 1e-15);
    }

    #[test]
    fn rerand_variance_bounds() {
        let w = Array2::from_shape_vec((6, 2), vec![1.0, 0.3, 2.1, -1.0, 2.9, 0.5, 0.2, 0.1, 1.1, 2.0, 3.5, -0.4]).unwrap();
        let (x, w, blocks, z, y) = rerand_fixture(vec![1.0, 2.0, 3.5, 0.4, 1.0, 3.0], w);
        let obs = Observed::new(x.view(), &blocks, &z, &y).unwrap();
        let (v_inf, parts) = var_unadj_rerand(&obs, w.view(), f64::INFINITY).unwrap();
        assert_eq!(parts.v_ka, 1.0);
        assert_abs_diff_eq!(v_inf, var_unadj(&obs), epsilon = 1e-15);
        let (v, parts) = var_unadj_rerand(&obs, w.view(), chi2_quantile(0.01, 2).unwrap()).unwrap();
        assert!(v <= var_unadj(&obs));
        assert!((0.0..=1.0).contains(&parts.r2_hat));
        assert!(parts.r2_hat > 0.0);
        assert!(parts.v_ka > 0.0 && parts.v_ka < 1.0);
    }

    #[test]
    fn truncation_factor_matches_monte_carlo() {
        let a = chi2_quantile(0.001, 4).unwrap();
        let v = truncation_factor(4, a).unwrap();
        assert_abs_diff_eq!(v, chi2_cdf(a, 6).unwrap() / 0.001, epsilon = 1e-9);
        let mut rng = Rng::new(77, 0);
        let (mut c4, mut c6) = (0u64, 0u64);
        let draws = 10_000_000u64;
        for _ in 0..draws {
            let mut s = 0.0;
            for _ in 0..4 {
                let g = rng.standard_normal();
                s += g * g;
            }
            if s <= a {
                c4 += 1;
                let g1 = rng.standard_normal();
                let g2 = rng.standard_normal();
                if s + g1 * g1 + g2 * g2 <= a {
                    c6 += 1;
                }
            }
        }
        // χ²₆ ≤ a implies χ²₄ ≤ a for nested sums, so c6/c4 is a binomial proportion
        let ratio = c6 as f64 / c4 as f64;
        let se = (v * (1.0 - v) / c4 as f64).sqrt();
        assert!((ratio - v).abs() < 4.0 * se, "MC {ratio} vs {v} (se {se})");
    }

    #[test]
    fn csv_line_fields() {
        let (x, blocks, z, y) = synthetic(5, 20, 2, 10, 5);
        let obs = Observed::new(x.view(), &blocks, &z, &y).unwrap();
        let line = unadj_report(&obs, 0.05).unwrap().csv_line();
        assert_eq!(line.split(',').count(), EstimateReport::CSV_HEADER.split(',').count());
        assert!(line.starts_with("unadj,"));
    }
}
