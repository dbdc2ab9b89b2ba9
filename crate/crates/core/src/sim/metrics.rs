use serde::{Deserialize, Serialize};

use crate::numerics::Rng;

/// A metric with its bootstrap standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub value: f64,
    pub se: f64,
}

/// Per-replication outcomes of one estimator.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Series {
    pub tau_hat: Vec<f64>,
    pub length: Vec<f64>,
    pub covered: Vec<bool>,
}

impl Series {
    pub fn len(&self) -> usize {
        self.tau_hat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tau_hat.is_empty()
    }
}

/// Raw metrics on the natural scale (proportions, not percentages).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Raw {
    pub bias: f64,
    pub sd: f64,
    pub rmse: f64,
    pub cp: f64,
    pub length: f64,
}

/// Metrics over the replications listed in `idx`.
pub fn raw_metrics(series: &Series, idx: &[usize], tau: f64) -> Raw {
    let r = idx.len() as f64;
    let mean = idx.iter().map(|&i| series.tau_hat[i]).sum::<f64>() / r;
    let ss = idx.iter().map(|&i| (series.tau_hat[i] - mean).powi(2)).sum::<f64>();
    let sd = if idx.len() > 1 { (ss / (r - 1.0)).sqrt() } else { 0.0 };
    let mse = idx.iter().map(|&i| (series.tau_hat[i] - tau).powi(2)).sum::<f64>() / r;
    Raw {
        bias: (mean - tau).abs(),
        sd,
        rmse: mse.sqrt(),
        cp: idx.iter().filter(|&&i| series.covered[i]).count() as f64 / r,
        length: idx.iter().map(|&i| series.length[i]).sum::<f64>() / r,
    }
}

/// Table metrics ×100, with sd% and le% relative to `baseline`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub bias: Metric,
    pub sd: Metric,
    pub sd_pct: Metric,
    pub rmse: Metric,
    pub cp: Metric,
    pub length: Metric,
    pub le_pct: Metric,
}

/// Where the sd%/le% reference comes from.
#[derive(Debug, Clone, Copy)]
pub enum Baseline<'a> {
    /// The series is its own reference (sd% = le% = 0).
    Itself,
    /// Another series of the same replication grid (resampled jointly).
    Paired(&'a Series),
    /// A series from an independent cell (resampled independently).
    Independent(&'a Series),
}

fn to_row(raw: Raw, base: Raw) -> [f64; 7] {
    [
        100.0 * raw.bias,
        100.0 * raw.sd,
        100.0 * (1.0 - raw.sd / base.sd),
        100.0 * raw.rmse,
        100.0 * raw.cp,
        100.0 * raw.length,
        100.0 * (1.0 - raw.length / base.length),
    ]
}

/// Summary metrics with bootstrap standard errors over `reps` resamples of
/// the replications.
pub fn summarize(series: &Series, baseline: Baseline<'_>, tau: f64, reps: usize, rng: &mut Rng) -> Metrics {
    let all: Vec<usize> = (0..series.len()).collect();
    let base_of = |idx: &[usize], base_idx: &[usize]| match baseline {
        Baseline::Itself => raw_metrics(series, idx, tau),
        Baseline::Paired(b) => raw_metrics(b, idx, tau),
        Baseline::Independent(b) => raw_metrics(b, base_idx, tau),
    };
    let base_all: Vec<usize> = match baseline {
        Baseline::Independent(b) => (0..b.len()).collect(),
        _ => all.clone(),
    };
    let point = to_row(raw_metrics(series, &all, tau), base_of(&all, &base_all));

    let mut sums = [0.0; 7];
    let mut squares = [0.0; 7];
    let mut idx = vec![0; series.len()];
    let mut base_idx = vec![0; base_all.len()];
    for _ in 0..reps {
        idx.iter_mut().for_each(|i| *i = rng.below(series.len()));
        if let Baseline::Independent(_) = baseline {
            let nb = base_idx.len();
            base_idx.iter_mut().for_each(|i| *i = rng.below(nb));
        }
        let row = to_row(raw_metrics(series, &idx, tau), base_of(&idx, &base_idx));
        for t in 0..7 {
            sums[t] += row[t];
            squares[t] += row[t] * row[t];
        }
    }
    let se = |t: usize| {
        if reps < 2 {
            return 0.0;
        }
        let mean = sums[t] / reps as f64;
        ((squares[t] - reps as f64 * mean * mean) / (reps as f64 - 1.0)).max(0.0).sqrt()
    };
    let m = |t: usize| Metric { value: point[t], se: se(t) };
    Metrics { bias: m(0), sd: m(1), sd_pct: m(2), rmse: m(3), cp: m(4), length: m(5), le_pct: m(6) }
}
