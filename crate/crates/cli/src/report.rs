//! Self-describing experiment reports: the effective config is echoed in
//! full, numbers are printed with 17 significant digits so they round-trip,
//! and the wall-clock field is informational only.

use std::path::Path;

use serde::Serialize;

use crate::{CliError, OutputFormat};

#[derive(Debug, Clone, Serialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Verdict {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub config: serde_json::Value,
    pub tables: Vec<Table>,
    pub verdicts: Vec<Verdict>,
    pub wall_clock_seconds: f64,
}

impl ExperimentReport {
    pub fn new<C: Serialize>(experiment: &str, config: &C) -> Result<Self, CliError> {
        Ok(Self {
            experiment: experiment.to_string(),
            config: serde_json::to_value(config)
                .map_err(|e| CliError::Config(e.to_string()))?,
            tables: Vec::new(),
            verdicts: Vec::new(),
            wall_clock_seconds: 0.0,
        })
    }

}

/// 17 significant digits: enough for f64 round-trip exactness.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn fmt_usize(x: usize) -> String {
    x.to_string()
}

pub fn fmt_bool(x: bool) -> String {
    x.to_string()
}

fn to_csv(report: &ExperimentReport) -> String {
    let mut out = String::new();
    out.push_str(&format!("# experiment: {}\n", report.experiment));
    for table in &report.tables {
        out.push_str(&format!("# table: {}\n", table.name));
        out.push_str(&table.columns.join(","));
        out.push('\n');
        for row in &table.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
    }
    if !report.verdicts.is_empty() {
        out.push_str("# table: verdicts\n");
        out.push_str("name,pass,detail\n");
        for v in &report.verdicts {
            out.push_str(&format!("{},{},{}\n", v.name, v.pass, v.detail.replace(',', ";")));
        }
    }
    out
}

pub fn emit(
    report: &ExperimentReport,
    out: Option<&Path>,
    format: OutputFormat,
) -> Result<(), CliError> {
    let text = match format {
        OutputFormat::Json => serde_json::to_string_pretty(report)
            .map_err(|e| CliError::Config(e.to_string()))?,
        OutputFormat::Csv => to_csv(report),
    };
    match out {
        Some(path) => std::fs::write(path, text.as_bytes())
            .map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display()))),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}
