use std::path::Path;

use serde::Serialize;
use stratx::{BlockStructure, DesignError, DesignKind, DesignResult, DesignSpec, Randomizer, Rng};

use super::{load_data, load_schema, pretty_json, write_pair};
use crate::args::{DesignArgs, DesignChoice, Format};
use crate::error::CliError;

#[derive(Debug, Serialize)]
struct BlockSummary {
    name: String,
    size: usize,
    treated: usize,
}

#[derive(Debug, Serialize)]
struct DesignOutput<'a> {
    design: DesignKind,
    seed: u64,
    n: usize,
    blocks: Vec<BlockSummary>,
    design_covariates: &'a [String],
    dropped_design_covariates: &'a [String],
    p_a: Option<f64>,
    #[serde(flatten)]
    result: &'a DesignResult,
}

pub fn run(args: &DesignArgs, out: &mut Vec<u8>) -> Result<(), CliError> {
    if !(args.treated_fraction > 0.0 && args.treated_fraction < 1.0) {
        return Err(CliError::invalid(format!("--treated-fraction must lie in (0, 1), got {}", args.treated_fraction)));
    }
    let mut schema = load_schema(&args.input)?;
    // adjustment covariates play no role at design time
    schema.covariates.get_or_insert_with(Vec::new);
    let clean = load_data(&args.input, &schema)?;
    let data = &clean.data;
    let n = data.n();
    let kind = match args.design {
        DesignChoice::Complete => DesignKind::Complete,
        DesignChoice::Stratified => DesignKind::Stratified,
        DesignChoice::Rerand => DesignKind::Rerandomized,
        DesignChoice::StratRerand => DesignKind::StratifiedRerandomized,
    };
    let mut spec = if kind.stratifies() {
        let e = vec![args.treated_fraction; data.num_blocks()];
        DesignSpec::stratified(BlockStructure::with_propensities(data.block_of.clone(), &e)?)
    } else {
        if data.num_blocks() > 1 {
            return Err(CliError::invalid(format!(
                "complete randomization ignores blocks but the data has {} blocks; use a stratified design",
                data.num_blocks()
            )));
        }
        DesignSpec::complete(n, (args.treated_fraction * n as f64).round() as usize)?
    };
    if kind.rerandomizes() {
        if data.k() == 0 {
            return Err(CliError::invalid("rerandomized designs need design covariates (--design-cols or schema \"design\")"));
        }
        spec = spec.rerandomized(data.w.clone(), args.pa);
    }
    if let Some(cap) = args.max_draws {
        spec = spec.with_max_draws(cap);
    }
    spec.check()?;
    let mut randomizer = Randomizer::new(&spec).map_err(|e| name_collinear(e, &data.w_names))?;
    let result = randomizer.draw(&mut Rng::new(args.seed, 0))?;

    let blocks = (0..spec.blocks.num_blocks())
        .map(|m| BlockSummary {
            name: data.block_names.get(m).cloned().unwrap_or_else(|| (m + 1).to_string()),
            size: spec.blocks.size(m),
            treated: spec.blocks.treated(m),
        })
        .collect();
    let output = DesignOutput {
        design: kind,
        seed: args.seed,
        n,
        blocks,
        design_covariates: &data.w_names,
        dropped_design_covariates: &clean.dropped_w,
        p_a: kind.rerandomizes().then_some(args.pa),
        result: &result,
    };
    let json = pretty_json(&output)?;
    let csv = augmented_csv(&args.input.input, &result.z)?;
    if let Some(dir) = &args.output.out {
        write_pair(dir, "design", &json, &csv)?;
    }
    match args.output.format {
        Format::Json => out.extend_from_slice(json.as_bytes()),
        Format::Csv => out.extend_from_slice(csv.as_bytes()),
    }
    Ok(())
}

fn name_collinear(e: DesignError, names: &[String]) -> CliError {
    match e {
        DesignError::RankDeficient { pivot } => {
            let column = names.get(pivot).cloned().unwrap_or_else(|| format!("#{pivot}"));
            let earlier = &names[..pivot.min(names.len())];
            CliError::invalid(format!(
                "design covariate '{column}' is collinear with {earlier:?} after stratification; drop it"
            ))
            .with_details(serde_json::json!({ "collinear_column": column, "with": earlier }))
        }
        other => other.into(),
    }
}

/// The input CSV with a `Z` column appended (or overwritten).
fn augmented_csv(input: &Path, z: &[u8]) -> Result<String, CliError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(input)?;
    let mut header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let existing = header.iter().position(|h| h.trim() == "Z");
    if existing.is_none() {
        header.push("Z".to_string());
    }
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(&header)?;
    for (i, record) in rdr.records().enumerate() {
        let mut fields: Vec<String> = record?.iter().map(str::to_string).collect();
        let value = z.get(i).ok_or_else(|| CliError::invalid("input changed while reading"))?.to_string();
        match existing {
            Some(c) => fields[c] = value,
            None => fields.push(value),
        }
        wtr.write_record(&fields)?;
    }
    let bytes = wtr.into_inner().map_err(|e| CliError::invalid(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| CliError::invalid(e.to_string()))
}
