//! Metric rows as CSV, their summaries, and two-column curve files.

use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::{summarize, MetricRow, MetricSummary};

pub fn write_metrics(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize()
        .map(|row| row.map_err(|e| csv_error(path, e)))
        .collect()
}

pub fn write_summary(path: &Path, rows: &[MetricRow]) -> Result<Vec<MetricSummary>> {
    let summary = summarize(rows);
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for s in &summary {
        w.serialize(s).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(summary)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format(path, format!("{other:?}")),
    }
}

/// One `x y` pair per line, full round-trip precision.
pub fn write_curve(path: &Path, points: &[(f64, f64)]) -> Result<()> {
    let mut text = String::new();
    for (x, y) in points {
        text.push_str(&format!("{x} {y}\n"));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Blank lines and lines starting with `#` are skipped.
pub fn read_curve(path: &Path) -> Result<Vec<(f64, f64)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        let parsed = match cols.as_slice() {
            [x, y] => x.parse::<f64>().ok().zip(y.parse::<f64>().ok()),
            _ => None,
        };
        out.push(
            parsed.ok_or_else(|| {
                Error::format(path, format!("line {}: expected two numbers", n + 1))
            })?,
        );
    }
    Ok(out)
}
