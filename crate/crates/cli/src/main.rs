//! `l2sim`: calculators, scenario simulation, benchmarks and reports.
//!
//! Exit status is 0 on success, 1 when a simulation detects a violated
//! invariant or fails at runtime, and 2 on usage or schema errors.

mod bench;
mod calc;
mod scenario;
mod simulate;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "l2sim", version, about = "Layer-2 payment scaling simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Throughput and fee calculators.
    Calc {
        #[command(subcommand)]
        kind: calc::CalcKind,
        /// Print exact rationals as JSON.
        #[arg(long, global = true)]
        json: bool,
    },
    /// Run a scenario file and write its event log and summary.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the supermarket benchmark and write the comparison report.
    Bench {
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Rebuild report.md and report.csv from a bench output directory.
    Report {
        dir: PathBuf,
        /// Where to write; defaults to the input directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("invariant violated: {0}")]
    Violation(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Violation(_) | CliError::Failed(_) => 1,
        }
    }

    pub fn io(path: &std::path::Path, e: std::io::Error) -> Self {
        CliError::Failed(format!("{}: {e}", path.display()))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Calc { kind, json } => calc::run(kind, json),
        Command::Simulate { scenario, out, seed } => simulate::run(&scenario, &out, seed),
        Command::Bench { scenario, out, seed } => bench::run(scenario.as_deref(), &out, seed),
        Command::Report { dir, out } => bench::report(&dir, out.as_deref().unwrap_or(&dir)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Usage(String::new()).code(), 2);
        assert_eq!(CliError::Violation(String::new()).code(), 1);
        assert_eq!(CliError::Failed(String::new()).code(), 1);
    }
}
