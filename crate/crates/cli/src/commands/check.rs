use stratx::{run_checks, CheckOptions};

use super::{pretty_json, write_pair};
use crate::args::{CheckArgs, Format};
use crate::error::{CliError, EXIT_CHECK_FAILED};

pub fn run(args: &CheckArgs, out: &mut Vec<u8>) -> Result<(), CliError> {
    if args.draws == 0 {
        return Err(CliError::invalid("--draws must be positive"));
    }
    let options = CheckOptions {
        seed: args.seed,
        draws: args.draws,
        kkt_problems: args.kkt_problems,
        sigma_scale: args.inject_sigma_scale,
    };
    let report = run_checks(&options)?;

    let json = pretty_json(&report)?;
    let mut csv = String::from("suite,property,statistic,threshold,passed\n");
    for r in &report.results {
        csv.push_str(&format!("{},{},{:e},{:e},{}\n", r.suite, r.property, r.statistic, r.threshold, r.passed));
    }
    if let Some(dir) = &args.output.out {
        write_pair(dir, "check", &json, &csv)?;
    }
    match args.output.format {
        Format::Json => out.extend_from_slice(json.as_bytes()),
        Format::Csv => {
            for r in &report.results {
                let verdict = if r.passed { "PASS" } else { "FAIL" };
                out.extend_from_slice(
                    format!("{verdict} {}/{}: {:.3e} <= {:.3e}\n", r.suite, r.property, r.statistic, r.threshold).as_bytes(),
                );
            }
        }
    }
    if !report.passed() {
        let failures: Vec<_> = report.failures().collect();
        return Err(CliError::new(
            EXIT_CHECK_FAILED,
            "check_failed",
            format!("{} of {} properties failed", failures.len(), report.results.len()),
        )
        .with_details(&failures));
    }
    Ok(())
}
