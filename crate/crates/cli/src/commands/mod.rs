pub mod analyze;
pub mod check;
pub mod design;
pub mod simulate;

use std::path::Path;

use serde::Serialize;
use stratx::data::{validate, Violation};
use stratx::io::ingest_csv;
use stratx::{ExperimentData, Schema};

use crate::args::InputArgs;
use crate::error::CliError;

/// Schema from `--schema` with the per-role flags layered on top.
pub fn load_schema(args: &InputArgs) -> Result<Schema, CliError> {
    let mut schema = match &args.schema {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::invalid(format!("cannot read schema {}: {e}", path.display())))?;
            Schema::from_json(&text).map_err(|e| CliError::invalid(format!("bad schema {}: {e}", path.display())))?
        }
        None => Schema::default(),
    };
    if args.outcome.is_some() {
        schema.outcome = args.outcome.clone();
    }
    if args.assignment.is_some() {
        schema.assignment = args.assignment.clone();
    }
    if args.block.is_some() {
        schema.block = args.block.clone();
    }
    if !args.design_cols.is_empty() {
        schema.design = args.design_cols.clone();
    }
    if !args.covariates.is_empty() {
        schema.covariates = Some(args.covariates.clone());
    }
    Ok(schema)
}

/// Ingested and validated data with block-dependent columns removed, plus
/// the names of the removed columns `(covariates, design)`.
pub struct CleanData {
    pub data: ExperimentData,
    pub dropped_x: Vec<String>,
    pub dropped_w: Vec<String>,
}

pub fn load_data(args: &InputArgs, schema: &Schema) -> Result<CleanData, CliError> {
    let data = ingest_csv(&args.input, schema)?;
    let report = validate(&data);
    let blocking: Vec<&Violation> = report.blocking().collect();
    if !blocking.is_empty() {
        let first = blocking[0].to_string();
        return Err(CliError::invalid(format!("{} validation problem(s); first: {first}", blocking.len()))
            .with_details(&blocking));
    }
    let dropped_x: Vec<String> = report.drop_x.iter().map(|&j| data.x_names[j].clone()).collect();
    let dropped_w: Vec<String> = report.drop_w.iter().map(|&j| data.w_names[j].clone()).collect();
    for name in dropped_x.iter().chain(&dropped_w) {
        warn(&format!("column '{name}' is constant within every block and was dropped"));
    }
    Ok(CleanData { data: data.drop_block_dependent(&report), dropped_x, dropped_w })
}

/// One JSON line on stderr; stdout stays machine readable.
pub fn warn(message: &str) {
    eprintln!("{}", serde_json::json!({ "warning": message }));
}

pub fn pretty_json(value: &impl Serialize) -> Result<String, CliError> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

/// Writes `<name>.json` and `<name>.csv` into `dir`, creating it.
pub fn write_pair(dir: &Path, name: &str, json: &str, csv: &str) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(format!("{name}.json")), json)?;
    std::fs::write(dir.join(format!("{name}.csv")), csv)?;
    Ok(())
}
