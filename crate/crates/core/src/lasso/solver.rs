//! Cyclic coordinate descent for the weighted Lasso.
//!
//! The solver works on the weighted Gram system: with `c = Dᵀ V r` and
//! `G = Dᵀ V D`, it tracks the negative gradient `g = c - G β` and updates
//! it after every coordinate move. Gram columns are only formed for
//! coordinates that ever become nonzero, so a sparse path over many
//! predictors never pays for the full `p × p` matrix.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{LassoError, WeightedLassoProblem};
use crate::numerics::Cholesky;

/// Hard cap on coordinate sweeps for one value of λ.
pub const MAX_SWEEPS: usize = 100_000;
/// Relative KKT accuracy the solver aims for before stopping.
const KKT_TARGET: f64 = 1e-10;
/// Active sweeps between attempts to jump to the sign-constrained optimum.
const NEWTON_EVERY: usize = 20;
/// Relative KKT accuracy every returned fit must meet.
pub const KKT_TOLERANCE: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvDiagnostics {
    pub lambda_grid: Vec<f64>,
    /// Held-out weighted squared error per λ; `None` beyond the sparsity cap.
    pub cv_error: Vec<Option<f64>>,
    /// Nonzeros of the full-data fit per λ; `None` where the path stopped.
    pub nonzeros: Vec<Option<usize>>,
    pub chosen_lambda: f64,
    pub chosen_index: usize,
    /// Maximum admissible nonzeros (exclusive).
    pub sparsity_cap: usize,
    /// Fold of each unit of the arm, in ascending unit order.
    pub folds: Vec<usize>,
    /// Set when no λ passed the sparsity cap and the null fit was returned.
    pub all_rejected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoFit {
    pub beta: Vec<f64>,
    pub active_set: Vec<usize>,
    pub lambda: f64,
    pub n_iter: usize,
    pub kkt_residual: f64,
    pub objective: f64,
    pub cv: Option<CvDiagnostics>,
}

impl LassoFit {
    pub fn nonzeros(&self) -> usize {
        self.active_set.len()
    }

    /// All-zero fit, as returned when λ ≥ λ_max.
    pub fn null(p: usize, lambda: f64) -> Self {
        Self {
            beta: vec![0.0; p],
            active_set: Vec::new(),
            lambda,
            n_iter: 0,
            kkt_residual: 0.0,
            objective: f64::NAN,
            cv: None,
        }
    }
}

fn soft_threshold(u: f64, lambda: f64) -> f64 {
    if u > lambda {
        u - lambda
    } else if u < -lambda {
        u + lambda
    } else {
        0.0
    }
}

/// Maximum over coordinates of the KKT violation, given the negative
/// gradient `g`.
pub fn kkt_violation(beta: &[f64], g: &[f64], lambda: f64) -> f64 {
    beta.iter()
        .zip(g)
        .map(|(&b, &gj)| {
            if b > 0.0 {
                (gj - lambda).abs()
            } else if b < 0.0 {
                (gj + lambda).abs()
            } else {
                (gj.abs() - lambda).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

/// Negative gradient from scratch via residuals: g_j = Σ v_i D_ij (r_i - D_iᵀβ).
pub fn gradient(problem: &WeightedLassoProblem, beta: &[f64]) -> Vec<f64> {
    let d = &problem.predictors;
    let mut resid: Vec<f64> = problem.response.clone();
    for (j, &b) in beta.iter().enumerate() {
        if b != 0.0 {
            for (ri, &dij) in resid.iter_mut().zip(d.column(j)) {
                *ri -= dij * b;
            }
        }
    }
    for (ri, &vi) in resid.iter_mut().zip(&problem.weights) {
        *ri *= vi;
    }
    (0..d.ncols()).map(|j| d.column(j).iter().zip(&resid).map(|(a, b)| a * b).sum()).collect()
}

/// Objective value at `beta`, evaluated directly.
pub fn objective(problem: &WeightedLassoProblem, beta: &[f64], lambda: f64) -> f64 {
    let d = &problem.predictors;
    let mut resid = problem.response.clone();
    for (j, &b) in beta.iter().enumerate() {
        if b != 0.0 {
            for (ri, &dij) in resid.iter_mut().zip(d.column(j)) {
                *ri -= dij * b;
            }
        }
    }
    let fit: f64 = resid.iter().zip(&problem.weights).map(|(r, v)| v * r * r).sum();
    0.5 * fit + lambda * beta.iter().map(|b| b.abs()).sum::<f64>()
}

/// Smallest λ with an all-zero solution: max_j |Σ v_i D_ij r_i|.
pub fn lambda_max(problem: &WeightedLassoProblem) -> f64 {
    let zero = vec![0.0; problem.p()];
    gradient(problem, &zero).iter().fold(0.0, |m, g| m.max(g.abs()))
}

/// Warm-started coordinate descent along a decreasing sequence of λ.
#[derive(Debug)]
pub struct PathSolver<'a> {
    problem: &'a WeightedLassoProblem,
    c: Vec<f64>,
    diag: Vec<f64>,
    gram: Vec<Vec<f64>>,
    beta: Vec<f64>,
    grad: Vec<f64>,
    active: Vec<usize>,
    in_active: Vec<bool>,
    half_rvr: f64,
    scale: f64,
    change_tol: f64,
}

impl<'a> PathSolver<'a> {
    pub fn new(problem: &'a WeightedLassoProblem) -> Self {
        let d = &problem.predictors;
        let p = d.ncols();
        let v = &problem.weights;
        let vr: Vec<f64> = problem.response.iter().zip(v).map(|(r, w)| r * w).collect();
        let mut c = Vec::with_capacity(p);
        let mut diag = Vec::with_capacity(p);
        for j in 0..p {
            let col = d.column(j);
            let col = col.as_slice().expect("column-major predictors");
            c.push(col.iter().zip(&vr).map(|(a, b)| a * b).sum::<f64>());
            diag.push(col.iter().zip(v).map(|(a, w)| w * a * a).sum::<f64>());
        }
        let half_rvr = 0.5 * problem.response.iter().zip(&vr).map(|(r, b)| r * b).sum::<f64>();
        let r_inf = problem.response.iter().fold(0.0f64, |m, r| m.max(r.abs()));
        let lmax = c.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        Self {
            problem,
            grad: c.clone(),
            c,
            diag,
            gram: vec![Vec::new(); p],
            beta: vec![0.0; p],
            active: Vec::new(),
            in_active: vec![false; p],
            half_rvr,
            scale: lmax.max(1.0),
            change_tol: 1e-7 * r_inf.max(1.0),
        }
    }

    pub fn lambda_max(&self) -> f64 {
        self.c.iter().fold(0.0, |m, g| m.max(g.abs()))
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn nonzeros(&self) -> usize {
        self.beta.iter().filter(|b| **b != 0.0).count()
    }

    /// KKT scale: max(1, λ_max).
    pub fn scale(&self) -> f64 {
        self.scale
    }

    fn gram_column(&mut self, j: usize) -> &[f64] {
        if self.gram[j].is_empty() {
            let d = &self.problem.predictors;
            let col_j = d.column(j);
            let vd: Vec<f64> = col_j.iter().zip(&self.problem.weights).map(|(a, w)| a * w).collect();
            let column: Vec<f64> = (0..d.ncols())
                .map(|k| {
                    let col = d.column(k);
                    let col = col.as_slice().expect("column-major predictors");
                    col.iter().zip(&vd).map(|(a, b)| a * b).sum()
                })
                .collect();
            self.gram[j] = column;
        }
        &self.gram[j]
    }

    fn update(&mut self, j: usize, lambda: f64) -> f64 {
        let dj = self.diag[j];
        if dj <= 0.0 {
            return 0.0;
        }
        let old = self.beta[j];
        let new = soft_threshold(self.grad[j] + dj * old, lambda) / dj;
        let delta = new - old;
        if delta != 0.0 {
            self.beta[j] = new;
            if !self.in_active[j] {
                self.in_active[j] = true;
                self.active.push(j);
            }
            self.gram_column(j);
            for (g, &gk) in self.grad.iter_mut().zip(&self.gram[j]) {
                *g -= gk * delta;
            }
        }
        delta.abs()
    }

    fn full_sweep(&mut self, lambda: f64) -> f64 {
        #[cfg(debug_assertions)]
        let before = self.tracked_objective(lambda);
        let mut max_change = 0.0f64;
        for j in 0..self.beta.len() {
            max_change = max_change.max(self.update(j, lambda));
        }
        #[cfg(debug_assertions)]
        self.assert_descent(before, self.tracked_objective(lambda));
        max_change
    }

    #[cfg(debug_assertions)]
    fn assert_descent(&self, before: f64, after: f64) {
        debug_assert!(
            after <= before + 1e-9 * (before.abs() + self.scale),
            "objective increased across a sweep: {before} -> {after}"
        );
    }

    /// Sweeps the active coordinates until the largest change is below
    /// `tol`, on a contiguous copy of the active Gram block. Leaves the
    /// full gradient current.
    fn active_phase(&mut self, lambda: f64, tol: f64, budget: usize) -> usize {
        let idx = self.active.clone();
        let k = idx.len();
        let mut block = vec![0.0; k * k];
        for (a, &j) in idx.iter().enumerate() {
            let col = &self.gram[j];
            for (b, &i) in idx.iter().enumerate() {
                block[a * k + b] = col[i];
            }
        }
        let mut beta: Vec<f64> = idx.iter().map(|&j| self.beta[j]).collect();
        let mut grad: Vec<f64> = idx.iter().map(|&j| self.grad[j]).collect();
        let diag: Vec<f64> = idx.iter().map(|&j| self.diag[j]).collect();
        let c: Vec<f64> = idx.iter().map(|&j| self.c[j]).collect();
        #[cfg(debug_assertions)]
        let objective = |beta: &[f64], grad: &[f64]| {
            self.half_rvr
                + (0..k).map(|a| -0.5 * (c[a] + grad[a]) * beta[a] + lambda * beta[a].abs()).sum::<f64>()
        };
        let signs = |beta: &[f64]| beta.iter().map(|b| b.partial_cmp(&0.0)).collect::<Vec<_>>();
        let mut last_signs = signs(&beta);
        let mut sweeps = 0;
        while sweeps < budget {
            #[cfg(debug_assertions)]
            let before = objective(&beta, &grad);
            let mut max_change = 0.0f64;
            for a in 0..k {
                if diag[a] <= 0.0 {
                    continue;
                }
                let old = beta[a];
                let new = soft_threshold(grad[a] + diag[a] * old, lambda) / diag[a];
                let delta = new - old;
                if delta != 0.0 {
                    beta[a] = new;
                    for (g, &gk) in grad.iter_mut().zip(&block[a * k..(a + 1) * k]) {
                        *g -= gk * delta;
                    }
                    max_change = max_change.max(delta.abs());
                }
            }
            sweeps += 1;
            #[cfg(debug_assertions)]
            self.assert_descent(before, objective(&beta, &grad));
            if max_change < tol {
                break;
            }
            if sweeps % NEWTON_EVERY == 0 {
                let now = signs(&beta);
                #[cfg(debug_assertions)]
                let before = objective(&beta, &grad);
                if now == last_signs && newton_step(&block, &c, lambda, &mut beta) {
                    for a in 0..k {
                        let row = &block[a * k..(a + 1) * k];
                        grad[a] = c[a] - row.iter().zip(&beta).map(|(g, b)| g * b).sum::<f64>();
                    }
                    #[cfg(debug_assertions)]
                    self.assert_descent(before, objective(&beta, &grad));
                }
                last_signs = now;
            }
        }
        for (a, &j) in idx.iter().enumerate() {
            self.beta[j] = beta[a];
        }
        self.refresh_gradient();
        sweeps
    }

    /// Recomputes g = c - Gβ from the cached Gram columns.
    fn refresh_gradient(&mut self) {
        self.grad.copy_from_slice(&self.c);
        for &j in &self.active {
            let b = self.beta[j];
            if b != 0.0 {
                for (g, &gk) in self.grad.iter_mut().zip(&self.gram[j]) {
                    *g -= gk * b;
                }
            }
        }
    }

    /// Objective from the tracked gradient: ½rᵀVr - ½(c + g)ᵀβ + λ‖β‖₁.
    fn tracked_objective(&self, lambda: f64) -> f64 {
        let mut acc = self.half_rvr;
        for &j in &self.active {
            let b = self.beta[j];
            acc += -0.5 * (self.c[j] + self.grad[j]) * b + lambda * b.abs();
        }
        acc
    }

    /// Solves at `lambda`, warm-starting from the current coefficients.
    pub fn fit(&mut self, lambda: f64) -> Result<LassoFit, LassoError> {
        let mut sweeps = 0usize;
        let mut tol = self.change_tol;
        loop {
            let change = self.full_sweep(lambda);
            sweeps += 1;
            if change < tol {
                self.refresh_gradient();
                let kkt = kkt_violation(&self.beta, &self.grad, lambda);
                let relaxed = sweeps > MAX_SWEEPS / 10 && kkt <= KKT_TOLERANCE * self.scale;
                if kkt <= KKT_TARGET * self.scale || relaxed {
                    break;
                }
                tol *= 1e-2;
                if tol < f64::MIN_POSITIVE {
                    tol = 0.0;
                }
                continue;
            }
            sweeps += self.active_phase(lambda, tol, MAX_SWEEPS.saturating_sub(sweeps));
            if sweeps >= MAX_SWEEPS {
                let kkt = kkt_violation(&self.beta, &self.grad, lambda);
                if kkt <= KKT_TOLERANCE * self.scale {
                    break;
                }
                return Err(LassoError::MaxIters { sweeps, kkt_residual: kkt, lambda });
            }
        }
        let kkt_residual = kkt_violation(&self.beta, &self.grad, lambda);
        let active_set: Vec<usize> = (0..self.beta.len()).filter(|&j| self.beta[j] != 0.0).collect();
        Ok(LassoFit {
            beta: self.beta.clone(),
            active_set,
            lambda,
            n_iter: sweeps,
            kkt_residual,
            objective: self.tracked_objective(lambda),
            cv: None,
        })
    }
}

/// Replaces `beta` by the minimizer of the objective on its current sign
/// pattern, `G_SS β_S = c_S - λ sign(β_S)`, when that minimizer keeps every
/// sign. The objective is a smooth quadratic on the orthant, so the jump
/// never increases it. Returns whether the jump was taken.
fn newton_step(block: &[f64], c: &[f64], lambda: f64, beta: &mut [f64]) -> bool {
    let k = beta.len();
    let support: Vec<usize> = (0..k).filter(|&a| beta[a] != 0.0).collect();
    let s = support.len();
    if s == 0 {
        return false;
    }
    let mut g = Array2::<f64>::zeros((s, s));
    for (u, &a) in support.iter().enumerate() {
        for (v, &b) in support.iter().enumerate() {
            g[[u, v]] = block[a * k + b];
        }
    }
    let rhs: Array1<f64> = support.iter().map(|&a| c[a] - lambda * beta[a].signum()).collect();
    let Ok(chol) = Cholesky::factor(g.view()) else {
        return false;
    };
    let sol = chol.solve(rhs.view());
    let consistent = support.iter().zip(&sol).all(|(&a, &x)| x.is_finite() && x * beta[a] > 0.0);
    if consistent {
        for (&a, &x) in support.iter().zip(&sol) {
            beta[a] = x;
        }
    }
    consistent
}

/// Solves one problem at its own λ, with the KKT residual recomputed from
/// scratch on the returned coefficients.
pub fn solve(problem: &WeightedLassoProblem) -> Result<LassoFit, LassoError> {
    if !(problem.lambda >= 0.0) {
        return Err(LassoError::InvalidLambda(problem.lambda));
    }
    let mut solver = PathSolver::new(problem);
    let mut fit = solver.fit(problem.lambda)?;
    let g = gradient(problem, &fit.beta);
    fit.kkt_residual = kkt_violation(&fit.beta, &g, problem.lambda);
    fit.objective = objective(problem, &fit.beta, problem.lambda);
    if fit.kkt_residual > KKT_TOLERANCE * solver.scale() {
        return Err(LassoError::MaxIters { sweeps: fit.n_iter, kkt_residual: fit.kkt_residual, lambda: problem.lambda });
    }
    Ok(fit)
}
