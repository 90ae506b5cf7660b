//! Grid sweeps over pruning settings.
//!
//! A grid is a JSON array of override objects applied to a base
//! [`RunConfig`]. Rows are appended to the output as each point finishes;
//! points whose configuration hash is already present in the output are
//! skipped, so an interrupted sweep resumes where it stopped.

use std::collections::HashSet;
use std::fs::OpenOptions;
use std::path::Path;

use serde_json::Value;

use crate::bench::Bench;
use crate::config::{Format, RunConfig};
use crate::error::{HarnessError, Result};
use crate::report::{csv_error, read_csv, read_json, write_json, SummaryRow};

#[derive(Debug, Clone, PartialEq)]
pub struct InvalidPoint {
    pub index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AblationOutcome {
    pub written: Vec<SummaryRow>,
    /// Points already present in the output or repeated in the grid.
    pub skipped: usize,
    pub invalid: Vec<InvalidPoint>,
}

pub fn read_grid(path: &Path) -> Result<Vec<Value>> {
    match read_json::<Value>(path)? {
        Value::Array(points) => Ok(points),
        _ => Err(HarnessError::parse(path, "grid must be a JSON array of override objects")),
    }
}

fn existing_rows(out: &Path, format: Format) -> Result<Vec<SummaryRow>> {
    let empty = std::fs::metadata(out).map(|m| m.len() == 0).unwrap_or(true);
    if empty {
        return Ok(Vec::new());
    }
    match format {
        Format::Csv => read_csv(out),
        Format::Json => read_json(out),
    }
}

fn append_csv(out: &Path, row: &SummaryRow, header: bool) -> Result<()> {
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(out)
        .map_err(|e| HarnessError::io(out, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(header).from_writer(file);
    w.serialize(row).map_err(|e| csv_error(out, e))?;
    w.flush().map_err(|e| HarnessError::io(out, e))
}

/// Runs every grid point not yet in `out`.
pub fn run_ablation(base: &RunConfig, grid: &[Value], out: &Path, format: Format) -> Result<AblationOutcome> {
    let mut rows = existing_rows(out, format)?;
    let mut seen: HashSet<String> = rows.iter().map(|r| r.config_hash.clone()).collect();
    let mut outcome = AblationOutcome::default();
    let mut bench: Option<Bench> = None;

    for (index, point) in grid.iter().enumerate() {
        let cfg = match base.with_overrides(point).and_then(|c| c.validate().map(|_| c)) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("grid point {index} skipped: {e}");
                outcome.invalid.push(InvalidPoint {
                    index,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        let hash = cfg.key().hash();
        if !seen.insert(hash) {
            outcome.skipped += 1;
            continue;
        }
        if !bench.as_ref().is_some_and(|b| b.serves(&cfg)) {
            // free the previous workload before building the next one
            drop(bench.take());
            bench = Some(Bench::prepare(&cfg)?);
        }
        let report = bench.as_ref().expect("prepared above").run(&cfg)?;
        let row = SummaryRow::from_report(&report);
        match format {
            Format::Csv => append_csv(out, &row, rows.is_empty())?,
            Format::Json => {}
        }
        rows.push(row.clone());
        if format == Format::Json {
            write_json(&rows, Some(out))?;
        }
        outcome.written.push(row);
    }
    Ok(outcome)
}
