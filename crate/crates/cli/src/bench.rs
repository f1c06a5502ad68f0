use std::fs;
use std::path::Path;

use l2sim::bench::{emit_report, run_all, Backend, BenchError, ComparisonReport, RunResult};

use crate::scenario::{self, BenchSection, Kind};
use crate::CliError;

fn bench_err(e: BenchError) -> CliError {
    match e {
        BenchError::InvalidSpec(_) | BenchError::Misconfigured(_) | BenchError::EmptyResults => {
            CliError::Usage(e.to_string())
        }
        other => CliError::Failed(other.to_string()),
    }
}

fn write(dir: &Path, name: &str, body: &str) -> Result<(), CliError> {
    let p = dir.join(name);
    fs::write(&p, body).map_err(|e| CliError::io(&p, e))
}

fn write_report(dir: &Path, report: &ComparisonReport) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    write(dir, "report.md", &report.to_markdown())?;
    write(dir, "report.csv", &report.to_csv().map_err(bench_err)?)
}

pub fn run(scenario: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<(), CliError> {
    let (section, scenario_seed) = match scenario {
        None => (BenchSection::default(), None),
        Some(p) => {
            let sc = scenario::load(p)?;
            if sc.backend != Kind::Bench {
                return Err(CliError::Usage(format!("{}: bench needs a bench scenario", p.display())));
            }
            (sc.bench.unwrap_or_default(), sc.seed)
        }
    };
    run_section(section, seed.or(scenario_seed), out)
}

/// Runs every selected backend and writes report.md, report.csv,
/// events.jsonl and results.json.
pub fn run_section(section: BenchSection, seed: Option<u64>, out: &Path) -> Result<(), CliError> {
    let mut workload = section.workload;
    if let Some(s) = seed {
        workload.seed = s;
    }
    let backends = section.backends.unwrap_or_else(|| Backend::ALL.to_vec());
    let results = run_all(&backends, &workload, &section.config).map_err(bench_err)?;
    let report = emit_report(&results).map_err(bench_err)?;
    write_report(out, &report)?;
    let events: String = results.iter().map(|r| r.events.to_jsonl()).collect();
    write(out, "events.jsonl", &events)?;
    let mut json = serde_json::to_string_pretty(&results).expect("serializable");
    json.push('\n');
    write(out, "results.json", &json)?;
    print!("{}", report.to_markdown());
    if let Some(r) = results.iter().find(|r| !r.accounting_closes()) {
        return Err(CliError::Violation(format!("{}: customer debits do not match credits plus fees", r.backend)));
    }
    Ok(())
}

pub fn report(dir: &Path, out: &Path) -> Result<(), CliError> {
    let path = dir.join("results.json");
    let text = fs::read_to_string(&path)
        .map_err(|e| CliError::Usage(format!("{}: {e}; run `l2sim bench` first", path.display())))?;
    let results: Vec<RunResult> =
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let report = emit_report(&results).map_err(bench_err)?;
    write_report(out, &report)?;
    print!("{}", report.to_markdown());
    Ok(())
}
