//! Deterministic experiment driver: exit 0 when every enabled assertion
//! passes, 1 on an assertion failure (the first failing residual is named on
//! stderr), 2 on a usage error.

mod commands;
mod report;
mod spec;

use clap::Parser;

fn main() {
    let cli = spec::Cli::parse();
    let experiment = match cli.resolve() {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(2);
        }
    };
    let outcome = match commands::run(&experiment) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(1);
        }
    };
    if let Err(e) = report::write_report(&outcome.records, &experiment.out, experiment.format) {
        eprintln!("error: cannot write report: {e}");
        std::process::exit(1);
    }
    if let Some(first) = outcome.failures.first() {
        eprintln!("FAIL {first}");
        for extra in &outcome.failures[1..] {
            eprintln!("     {extra}");
        }
        std::process::exit(1);
    }
}
