use std::io::Write as _;

use clap::Parser;

mod args;
mod commands;
mod error;
#[cfg(test)]
mod tests;

use args::{Cli, Command};
use error::CliError;

/// Runs one command and returns what it would print on stdout.
fn execute(cli: &Cli) -> Result<Vec<u8>, CliError> {
    let dispatch = || {
        let mut out = Vec::new();
        match &cli.command {
            Command::Design(a) => commands::design::run(a, &mut out),
            Command::Analyze(a) => commands::analyze::run(a, &mut out),
            Command::Simulate(a) => commands::simulate::run(a, &mut out),
            Command::Check(a) => commands::check::run(a, &mut out),
        }
        .map(|()| out)
    };
    match cli.threads {
        Some(0) => Err(CliError::invalid("--threads must be positive")),
        Some(threads) => rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| CliError::invalid(e.to_string()))?
            .install(dispatch),
        None => dispatch(),
    }
}

fn main() {
    // clap exits with status 2 on usage errors
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(out) => {
            let mut stdout = std::io::stdout().lock();
            if stdout.write_all(&out).and_then(|()| stdout.flush()).is_err() {
                std::process::exit(error::EXIT_INVALID);
            }
        }
        Err(e) => {
            eprintln!("{}", e.json_line());
            std::process::exit(e.code);
        }
    }
}
