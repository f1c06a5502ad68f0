use serde::Serialize;

use crate::rational::format_sig;

use super::{BenchError, RunResult};

pub const COLUMNS: [&str; 17] = [
    "Backend",
    "Scalability",
    "Security",
    "Decentralization",
    "Privacy",
    "Fees & micropayments",
    "Completed",
    "Failed",
    "TPS",
    "Latency mean (ms)",
    "Latency p50 (ms)",
    "Latency p95 (ms)",
    "Latency max (ms)",
    "Customer L1 fees",
    "Customer L2 fees",
    "Merchant L2 fees",
    "Currency",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ReportRow {
    pub cells: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ComparisonReport {
    pub rows: Vec<ReportRow>,
}

/// One row per result, in the order given.
pub fn emit_report(results: &[RunResult]) -> Result<ComparisonReport, BenchError> {
    if results.is_empty() {
        return Err(BenchError::EmptyResults);
    }
    let rows = results
        .iter()
        .map(|r| {
            let mut cells = vec![r.backend.id().to_string()];
            cells.extend(r.backend.descriptor().iter().map(|s| s.to_string()));
            cells.push(r.completed.to_string());
            cells.push(r.failures.len().to_string());
            cells.push(format_sig(&r.achieved_tps, 6));
            match &r.latency_ms {
                Some(l) => {
                    for v in [&l.mean, &l.p50, &l.p95, &l.max] {
                        cells.push(format_sig(v, 6));
                    }
                }
                None => cells.extend(std::iter::repeat_n("-".to_string(), 4)),
            }
            let f = &r.fee_totals;
            let currency = r.backend.currency();
            for fee in [f.customer_l1, f.customer_l2, f.merchant_l2] {
                cells.push(currency.format(fee));
            }
            cells.push(currency.symbol.to_string());
            ReportRow { cells }
        })
        .collect();
    Ok(ComparisonReport { rows })
}

impl ComparisonReport {
    /// Header followed by one line per row.
    pub fn matrix(&self) -> Vec<Vec<String>> {
        let mut m = vec![COLUMNS.iter().map(|c| c.to_string()).collect()];
        m.extend(self.rows.iter().map(|r| r.cells.clone()));
        m
    }

    pub fn to_markdown(&self) -> String {
        let line = |cells: &[String]| {
            let escaped: Vec<String> = cells.iter().map(|c| c.replace('|', "\\|")).collect();
            format!("| {} |\n", escaped.join(" | "))
        };
        let m = self.matrix();
        let mut out = line(&m[0]);
        out.push_str(&format!("|{}\n", "---|".repeat(COLUMNS.len())));
        for row in &m[1..] {
            out.push_str(&line(row));
        }
        out
    }

    pub fn to_csv(&self) -> Result<String, BenchError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in self.matrix() {
            w.write_record(&row)?;
        }
        let bytes = w.into_inner().map_err(|e| BenchError::Csv(e.into_error().into()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}
