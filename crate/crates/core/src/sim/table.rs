use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::estimate::Method;
use crate::io::format_f64;
use crate::numerics::Rng;

use super::metrics::{summarize, Baseline, Metrics};
use super::{population_for, run_cell_on, Blocking, CellResult, Scenario, SimError, SimulationConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scenario: Scenario,
    pub n: usize,
    pub block: Blocking,
    pub rerand: bool,
    pub method: Method,
    #[serde(flatten)]
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub cell: String,
    pub config: SimulationConfig,
    pub tau: f64,
    pub mean_draws_used: f64,
    pub rows: Vec<SummaryRow>,
}

impl CellSummary {
    pub fn row(&self, method: Method) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.method == method)
    }
}

/// Summary rows of a cell. `baseline` is the matching no-rerandomization
/// cell and is required when the cell is rerandomized.
pub fn summarize_cell(cell: &CellResult, baseline: Option<&CellResult>) -> CellSummary {
    let cfg = &cell.config;
    let unadj = cell.unadj_series();
    let adjusted = cell.adjusted_series();
    let base_series = baseline.map(CellResult::unadj_series);
    let (unadj_ref, adj_ref) = match (&base_series, cfg.rerand) {
        (Some(b), true) => (Baseline::Independent(b), Baseline::Independent(b)),
        _ => (Baseline::Itself, Baseline::Paired(&unadj)),
    };
    let seed = cfg.bootstrap_seed();
    let reps = cfg.bootstrap_reps;
    let row = |method, metrics| SummaryRow {
        scenario: cfg.scenario,
        n: cfg.n,
        block: cfg.blocking,
        rerand: cfg.rerand,
        method,
        metrics,
    };
    let rows = vec![
        row(Method::Unadj, summarize(&unadj, unadj_ref, cell.tau, reps, &mut Rng::new(seed, 0))),
        row(cell.adjusted_method, summarize(&adjusted, adj_ref, cell.tau, reps, &mut Rng::new(seed, 1))),
    ];
    CellSummary { cell: cfg.cell_name(), config: cfg.clone(), tau: cell.tau, mean_draws_used: cell.mean_draws(), rows }
}

/// Grid of cells sharing one scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct TableSpec {
    pub base: SimulationConfig,
    pub ns: Vec<usize>,
    pub blockings: Vec<Blocking>,
    pub rerands: Vec<bool>,
}

impl TableSpec {
    /// The full 12-cell grid of a scenario.
    pub fn full(base: SimulationConfig) -> Self {
        Self { base, ns: vec![200, 500], blockings: Blocking::ALL.to_vec(), rerands: vec![false, true] }
    }

    pub fn name(&self) -> String {
        format!("table_{}", self.base.scenario.name())
    }
}

#[derive(Debug, Clone)]
pub struct Table {
    pub name: String,
    pub summaries: Vec<CellSummary>,
    pub cells: Vec<CellResult>,
}

impl Table {
    pub fn rows(&self) -> impl Iterator<Item = &SummaryRow> {
        self.summaries.iter().flat_map(|s| s.rows.iter())
    }
}

/// Runs the grid, one population per n. Baseline cells needed for sd% and
/// le% are run even when not requested, but only requested cells are
/// reported. `on_cell` sees each summary as it completes.
pub fn run_table(spec: &TableSpec, mut on_cell: impl FnMut(&CellSummary)) -> Result<Table, SimError> {
    let mut summaries = Vec::new();
    let mut cells = Vec::new();
    for &n in &spec.ns {
        let pop_cfg = SimulationConfig { n, ..spec.base.clone() };
        pop_cfg.check()?;
        let population = population_for(&pop_cfg)?;
        for &blocking in &spec.blockings {
            let mut done: BTreeMap<bool, CellResult> = BTreeMap::new();
            let want_plain = spec.rerands.contains(&false);
            let want_rerand = spec.rerands.contains(&true);
            let plain_cfg = SimulationConfig { n, blocking, rerand: false, ..spec.base.clone() };
            done.insert(false, run_cell_on(&plain_cfg, &population)?);
            if want_plain {
                let s = summarize_cell(&done[&false], None);
                on_cell(&s);
                summaries.push(s);
            }
            if want_rerand {
                let cfg = SimulationConfig { rerand: true, ..plain_cfg.clone() };
                let cell = run_cell_on(&cfg, &population)?;
                let s = summarize_cell(&cell, Some(&done[&false]));
                on_cell(&s);
                summaries.push(s);
                done.insert(true, cell);
            }
            for (rerand, cell) in done {
                if spec.rerands.contains(&rerand) {
                    cells.push(cell);
                }
            }
        }
    }
    Ok(Table { name: spec.name(), summaries, cells })
}

const TABLE_COLUMNS: [&str; 18] = [
    "n", "block", "rerand", "est", "bias", "bias_se", "sd", "sd_se", "sd%", "sd%_se", "rmse", "rmse_se", "cp",
    "cp_se", "length", "length_se", "le%", "le%_se",
];

fn table_record(row: &SummaryRow) -> Vec<String> {
    let m = &row.metrics;
    let mut rec = vec![
        row.n.to_string(),
        row.block.name().to_string(),
        if row.rerand { "yes" } else { "no" }.to_string(),
        row.method.name().to_string(),
    ];
    for metric in [m.bias, m.sd, m.sd_pct, m.rmse, m.cp, m.length, m.le_pct] {
        rec.push(format!("{:.2}", metric.value));
        rec.push(format!("{:.2}", metric.se));
    }
    rec
}

/// Writes `<name>.csv` and `<name>.json` into `dir`.
pub fn write_table(dir: &Path, name: &str, summaries: &[CellSummary]) -> Result<(), SimError> {
    let mut wtr = csv::Writer::from_path(dir.join(format!("{name}.csv")))?;
    wtr.write_record(TABLE_COLUMNS)?;
    for row in summaries.iter().flat_map(|s| &s.rows) {
        wtr.write_record(table_record(row))?;
    }
    wtr.flush()?;
    std::fs::write(dir.join(format!("{name}.json")), serde_json::to_string_pretty(summaries)? + "\n")?;
    Ok(())
}

/// Writes the per-replication estimates of a cell to
/// `<cell>.estimates.csv` in `dir`.
pub fn write_cell_estimates(dir: &Path, cell: &CellResult) -> Result<(), SimError> {
    let name = cell.config.cell_name();
    let mut wtr = csv::Writer::from_path(dir.join(format!("{name}.estimates.csv")))?;
    let adj = cell.adjusted_method.name();
    wtr.write_record([
        "replication".to_string(),
        "draws_used".to_string(),
        "unadj".to_string(),
        "unadj_var".to_string(),
        "unadj_var_plain".to_string(),
        adj.to_string(),
        format!("{adj}_var"),
        "s_hat".to_string(),
    ])?;
    for r in &cell.records {
        let s_hat: Vec<String> = r.s_hat.iter().map(usize::to_string).collect();
        wtr.write_record([
            r.replication.to_string(),
            r.draws_used.to_string(),
            format_f64(r.unadj_tau),
            format_f64(r.unadj_var),
            format_f64(r.unadj_var_plain),
            format_f64(r.adjusted_tau),
            format_f64(r.adjusted_var),
            s_hat.join(";"),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}
