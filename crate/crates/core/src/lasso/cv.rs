use crate::data::Observed;
use crate::numerics::Rng;

use super::problem::{Adjustment, ArmTransform, WeightedLassoProblem};
use super::solver::{CvDiagnostics, LassoFit, PathSolver};
use super::LassoError;

#[derive(Debug, Clone, PartialEq)]
pub struct CvOptions {
    pub folds: usize,
    pub grid_len: usize,
    /// Smallest λ on the grid as a fraction of λ_max.
    pub min_ratio: f64,
    /// Admissible fits have fewer nonzeros than this. `None` means n/3,
    /// rounded up, with n the experiment size.
    pub max_nonzeros: Option<usize>,
}

impl Default for CvOptions {
    fn default() -> Self {
        Self { folds: 10, grid_len: 100, min_ratio: 1e-3, max_nonzeros: None }
    }
}

impl CvOptions {
    /// Smallest nonzero count that is rejected: nnz is admissible iff 3·nnz < n.
    fn cap(&self, n: usize) -> usize {
        self.max_nonzeros.unwrap_or(n.div_ceil(3))
    }
}

/// Geometric grid from `lambda_max` down to `min_ratio * lambda_max`.
pub fn lambda_grid(lambda_max: f64, len: usize, min_ratio: f64) -> Vec<f64> {
    if len == 1 {
        return vec![lambda_max];
    }
    let step = min_ratio.ln() / (len - 1) as f64;
    (0..len).map(|t| lambda_max * (step * t as f64).exp()).collect()
}

/// Fold label for each unit of `arm`, in ascending unit order. Each block's
/// units are shuffled and dealt round-robin, continuing from where the
/// previous block stopped.
pub fn fold_assignment(obs: &Observed<'_>, arm: u8, folds: usize, rng: &mut Rng) -> Vec<usize> {
    let mut label = vec![usize::MAX; obs.n()];
    let mut offset = 0usize;
    for m in 0..obs.blocks.num_blocks() {
        let mut units = obs.group(m, arm).to_vec();
        rng.shuffle(&mut units);
        for (k, &i) in units.iter().enumerate() {
            label[i] = (offset + k) % folds;
        }
        offset += units.len();
    }
    obs.arm_units(arm).into_iter().map(|i| label[i]).collect()
}

/// Chooses λ by K-fold cross-validation and returns the full-data fit at
/// that λ with its diagnostics attached.
///
/// The full-data path is truncated at the first λ whose fit reaches the
/// sparsity cap; only the λ before it are candidates.
pub fn cv_select(
    obs: &Observed<'_>,
    arm: u8,
    adjustment: Adjustment,
    options: &CvOptions,
    rng: &mut Rng,
) -> Result<LassoFit, LassoError> {
    let units = obs.arm_units(arm);
    let folds = options.folds;
    if folds < 2 || units.len() < folds {
        return Err(LassoError::TooFewUnits { units: units.len(), folds });
    }
    let cap = options.cap(obs.n());
    let full = adjustment.build(obs, arm, 0.0);
    let p = full.p();

    let mut path = PathSolver::new(&full);
    let lmax = path.lambda_max();
    let grid = lambda_grid(lmax, options.grid_len, options.min_ratio);
    let mut fits: Vec<LassoFit> = Vec::new();
    let mut nonzeros = vec![None; grid.len()];
    if lmax > 0.0 {
        for (t, &lambda) in grid.iter().enumerate() {
            let fit = path.fit(lambda)?;
            nonzeros[t] = Some(fit.nonzeros());
            if fit.nonzeros() >= cap {
                break;
            }
            fits.push(fit);
        }
    }
    let admissible = fits.len();

    let fold_of = fold_assignment(obs, arm, folds, rng);
    let mut cv_error = vec![0.0; admissible];
    for f in 0..folds {
        let mut in_fold = vec![false; obs.n()];
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for (&i, &fi) in units.iter().zip(&fold_of) {
            if fi == f {
                in_fold[i] = true;
                test.push(i);
            } else {
                train.push(i);
            }
        }
        let transform = ArmTransform::fit(obs, arm, adjustment, |i| !in_fold[i]);
        let (r, d, v) = transform.rows(obs, &train);
        let problem = WeightedLassoProblem::new(r, d, v, 0.0);
        let (r_test, d_test, _) = transform.rows(obs, &test);
        // held-out units keep their full-data weights
        let v_test: Vec<f64> = test
            .iter()
            .map(|i| full.weights[units.binary_search(i).expect("test unit in arm")])
            .collect();
        let mut solver = PathSolver::new(&problem);
        for (t, err) in cv_error.iter_mut().enumerate() {
            let fit = solver.fit(grid[t])?;
            let mut pred = r_test.clone();
            for &j in &fit.active_set {
                let b = fit.beta[j];
                for (pi, &dij) in pred.iter_mut().zip(d_test.column(j)) {
                    *pi -= dij * b;
                }
            }
            *err += pred.iter().zip(&v_test).map(|(e, v)| v * e * e).sum::<f64>();
        }
    }

    let all_rejected = admissible == 0 && lmax > 0.0;
    let chosen_index = cv_error
        .iter()
        .enumerate()
        .fold(None, |best: Option<(usize, f64)>, (t, &e)| match best {
            Some((_, be)) if be <= e => best,
            _ => Some((t, e)),
        })
        .map_or(0, |(t, _)| t);
    let mut fit = if admissible == 0 {
        LassoFit::null(p, lmax)
    } else {
        fits.swap_remove(chosen_index)
    };
    let cv_error = (0..grid.len()).map(|t| cv_error.get(t).copied()).collect();
    fit.cv = Some(CvDiagnostics {
        chosen_lambda: fit.lambda,
        lambda_grid: grid,
        cv_error,
        nonzeros,
        chosen_index,
        sparsity_cap: cap,
        folds: fold_of,
        all_rejected,
    });
    Ok(fit)
}
