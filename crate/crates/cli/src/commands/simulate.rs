use std::fmt::Write as _;

use stratx::sim::{run_table, write_cell_estimates, write_table, CellSummary, TableSpec};
use stratx::{Blocking, Scenario, SimulationConfig};

use super::pretty_json;
use crate::args::{BlockArg, Format, RerandArg, ScenarioArg, SimulateArgs};
use crate::error::CliError;

fn scenario(arg: ScenarioArg) -> Scenario {
    match arg {
        ScenarioArg::Ms => Scenario::Ms,
        ScenarioArg::Fl => Scenario::Fl,
        ScenarioArg::Msfl => Scenario::Msfl,
    }
}

fn blocking(arg: BlockArg) -> Blocking {
    match arg {
        BlockArg::No => Blocking::No,
        BlockArg::Eq => Blocking::Eq,
        BlockArg::Uneq => Blocking::Uneq,
    }
}

fn dedup<T: PartialEq + Copy>(items: &[T]) -> Vec<T> {
    let mut out = Vec::new();
    for &item in items {
        if !out.contains(&item) {
            out.push(item);
        }
    }
    out
}

pub fn run(args: &SimulateArgs, out: &mut Vec<u8>) -> Result<(), CliError> {
    let mut all = Vec::new();
    let mut csv = String::new();
    for &s in &dedup(&args.scenario) {
        let base = SimulationConfig {
            scenario: scenario(s),
            replications: args.replications,
            bootstrap_reps: args.bootstrap,
            p_a: args.pa,
            alpha: args.alpha,
            master_seed: args.seed,
            ..SimulationConfig::default()
        };
        let spec = TableSpec {
            ns: dedup(&args.n),
            blockings: dedup(&args.block).into_iter().map(blocking).collect(),
            rerands: dedup(&args.rerand).into_iter().map(|r| r == RerandArg::Yes).collect(),
            base,
        };
        // validate every requested cell before spending time on any of them
        for &n in &spec.ns {
            SimulationConfig { n, ..spec.base.clone() }.check()?;
        }
        let table = run_table(&spec, |summary| {
            eprintln!("{}", serde_json::json!({ "cell": summary.cell, "tau": summary.tau, "mean_draws_used": summary.mean_draws_used }));
        })?;
        if let Some(dir) = &args.output.out {
            std::fs::create_dir_all(dir)?;
            write_table(dir, &table.name, &table.summaries)?;
            for cell in &table.cells {
                write_cell_estimates(dir, cell)?;
            }
        }
        text_table(&mut csv, &table.name, &table.summaries);
        all.extend(table.summaries);
    }
    match args.output.format {
        Format::Json => out.extend_from_slice(pretty_json(&all)?.as_bytes()),
        Format::Csv => out.extend_from_slice(csv.as_bytes()),
    }
    Ok(())
}

/// Human-readable rows: value (se) per metric.
fn text_table(out: &mut String, name: &str, summaries: &[CellSummary]) {
    let _ = writeln!(out, "# {name}");
    let _ = writeln!(out, "n,block,rerand,est,bias,sd,sd%,rmse,cp,length,le%");
    for row in summaries.iter().flat_map(|s| &s.rows) {
        let m = &row.metrics;
        let cells: Vec<String> = [m.bias, m.sd, m.sd_pct, m.rmse, m.cp, m.length, m.le_pct]
            .iter()
            .map(|x| format!("{:.2} ({:.2})", x.value, x.se))
            .collect();
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            row.n,
            row.block.name(),
            if row.rerand { "yes" } else { "no" },
            row.method.name(),
            cells.join(",")
        );
    }
}
