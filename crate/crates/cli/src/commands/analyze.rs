use serde::Serialize;
use stratx::estimate::{lasso2_report, lasso_report, unadj_report, unadj_rerand_report};
use stratx::numerics::chi2_quantile;
use stratx::{CvOptions, EstimateReport, Observed, Rng};

use super::{load_data, load_schema, pretty_json, write_pair};
use crate::args::{AnalyzeArgs, Format, MethodChoice};
use crate::error::CliError;

#[derive(Debug, Serialize)]
struct AnalysisOutput<'a> {
    n: usize,
    num_blocks: usize,
    covariates: &'a [String],
    dropped_covariates: &'a [String],
    design_covariates: &'a [String],
    dropped_design_covariates: &'a [String],
    seed: u64,
    reports: Vec<EstimateReport>,
}

pub fn run(args: &AnalyzeArgs, out: &mut Vec<u8>) -> Result<(), CliError> {
    if !(args.alpha > 0.0 && args.alpha < 1.0) {
        return Err(CliError::invalid(format!("--alpha must lie in (0, 1), got {}", args.alpha)));
    }
    if args.folds < 2 {
        return Err(CliError::invalid(format!("--folds must be at least 2, got {}", args.folds)));
    }
    let schema = load_schema(&args.input)?;
    if schema.outcome.is_none() || schema.assignment.is_none() {
        return Err(CliError::invalid("analyze needs an outcome and an assignment column (--outcome, --assignment or --schema)"));
    }
    let clean = load_data(&args.input, &schema)?;
    let data = &clean.data;
    let blocks = data.blocks()?;
    let z = data.z.as_deref().ok_or_else(|| CliError::invalid("assignment column missing"))?;
    let y = data.y.as_deref().ok_or_else(|| CliError::invalid("outcome column missing"))?;
    let obs = Observed::new(data.x.view(), &blocks, z, y)?;

    let threshold = match (args.threshold, args.pa) {
        (Some(a), _) => Some(a),
        (None, Some(pa)) if data.k() > 0 => Some(chi2_quantile(pa, data.k() as u32)?),
        _ => None,
    };
    if threshold.is_some() && data.k() == 0 {
        return Err(CliError::invalid("--threshold needs design covariates (--design-cols or schema \"design\")"));
    }

    let options = CvOptions { folds: args.folds, ..CvOptions::default() };
    let want = |m: MethodChoice| args.method == m || args.method == MethodChoice::All;
    let mut reports = Vec::new();
    if want(MethodChoice::Unadj) {
        reports.push(unadj_report(&obs, args.alpha)?);
        if let Some(a) = threshold {
            reports.push(unadj_rerand_report(&obs, data.w.view(), a, args.alpha)?);
        }
    }
    if data.p() == 0 && (args.method == MethodChoice::Lasso || args.method == MethodChoice::Lasso2) {
        return Err(CliError::invalid("Lasso adjustment needs at least one covariate"));
    }
    if data.p() > 0 {
        if want(MethodChoice::Lasso) {
            reports.push(lasso_report(&obs, args.alpha, &options, &mut Rng::new(args.seed, 1))?);
        }
        if want(MethodChoice::Lasso2) {
            reports.push(lasso2_report(&obs, args.alpha, &options, &mut Rng::new(args.seed, 2))?);
        }
    }

    let output = AnalysisOutput {
        n: data.n(),
        num_blocks: blocks.num_blocks(),
        covariates: &data.x_names,
        dropped_covariates: &clean.dropped_x,
        design_covariates: &data.w_names,
        dropped_design_covariates: &clean.dropped_w,
        seed: args.seed,
        reports,
    };
    let json = pretty_json(&output)?;
    let mut csv = String::from(EstimateReport::CSV_HEADER);
    csv.push('\n');
    for report in &output.reports {
        csv.push_str(&report.csv_line());
        csv.push('\n');
    }
    if let Some(dir) = &args.output.out {
        write_pair(dir, "analysis", &json, &csv)?;
    }
    match args.output.format {
        Format::Json => out.extend_from_slice(json.as_bytes()),
        Format::Csv => out.extend_from_slice(csv.as_bytes()),
    }
    Ok(())
}
