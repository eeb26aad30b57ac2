//! `cta compare`: side-by-side metrics of several reports with differences
//! against the first.

use std::path::{Path, PathBuf};

use serde_json::Value;

use crate::Failure;

pub const DEFAULT_METRICS: [&str; 5] = ["source_accuracy", "accuracy", "dbi", "drift", "source_distance"];

#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    /// One label per compared report.
    pub columns: Vec<String>,
    pub metrics: Vec<String>,
    /// `values[m][c]`: metric `m` of report `c`.
    pub values: Vec<Vec<f64>>,
}

impl Comparison {
    /// Labels of the difference columns, `Δ(first−other)`.
    pub fn delta_columns(&self) -> Vec<String> {
        self.columns[1..]
            .iter()
            .map(|c| format!("Δ({}−{c})", self.columns[0]))
            .collect()
    }

    /// `deltas()[m][j]`: first report minus report `j + 1`.
    pub fn deltas(&self) -> Vec<Vec<f64>> {
        self.values
            .iter()
            .map(|row| row[1..].iter().map(|v| row[0] - v).collect())
            .collect()
    }

    pub fn to_csv(&self) -> Result<String, Failure> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["metric".to_string()];
        header.extend(self.columns.iter().cloned());
        header.extend(self.delta_columns());
        w.write_record(&header)?;
        for ((metric, row), deltas) in self.metrics.iter().zip(&self.values).zip(self.deltas()) {
            let mut record = vec![metric.clone()];
            record.extend(row.iter().chain(&deltas).map(|v| v.to_string()));
            w.write_record(&record)?;
        }
        let bytes = w.into_inner().map_err(|e| Failure::Internal(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Failure::Internal(e.to_string()))
    }

    pub fn to_text(&self) -> String {
        let mut header = self.columns.clone();
        header.extend(self.delta_columns());
        let width = header.iter().map(|h| h.chars().count()).max().unwrap_or(0).max(10);
        let metric_width = self.metrics.iter().map(String::len).max().unwrap_or(0).max(6);
        let mut text = format!("{:<metric_width$}", "metric");
        for h in &header {
            text += &format!("  {h:>width$}");
        }
        text.push('\n');
        for ((metric, row), deltas) in self.metrics.iter().zip(&self.values).zip(self.deltas()) {
            text += &format!("{metric:<metric_width$}");
            for v in row.iter().chain(&deltas) {
                text += &format!("  {v:>width$.4}");
            }
            text.push('\n');
        }
        text
    }
}

struct Entry {
    file: PathBuf,
    report: Value,
}

/// Accepts a run's `report.json`, a single report object or an array of
/// reports.
fn read_reports(path: &Path) -> Result<Vec<Entry>, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    let value: Value =
        serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: not a report: {e}", path.display())))?;
    let reports = match value {
        Value::Object(ref obj) if obj.contains_key("points") => obj["points"]
            .as_array()
            .into_iter()
            .flatten()
            .flat_map(|p| p.get("reports").and_then(Value::as_array).cloned().unwrap_or_default())
            .collect(),
        Value::Object(_) => vec![value],
        Value::Array(items) => items,
        _ => Vec::new(),
    };
    if reports.is_empty() {
        return Err(Failure::Config(format!("{}: contains no reports", path.display())));
    }
    Ok(reports
        .into_iter()
        .map(|report| Entry {
            file: path.to_path_buf(),
            report,
        })
        .collect())
}

/// The record at `iteration`, or the last one.
fn select_record<'a>(entry: &'a Entry, label: &str, iteration: Option<usize>) -> Result<&'a Value, Failure> {
    let records = entry
        .report
        .get("records")
        .and_then(Value::as_array)
        .ok_or_else(|| Failure::Config(format!("report `{label}` in {} has no `records`", entry.file.display())))?;
    let found = match iteration {
        None => records.last(),
        Some(it) => records
            .iter()
            .find(|r| r.get("iteration").and_then(Value::as_u64) == Some(it as u64)),
    };
    found.ok_or_else(|| {
        Failure::Config(match iteration {
            Some(it) => format!("report `{label}` has no record for iteration {it}"),
            None => format!("report `{label}` has no records"),
        })
    })
}

fn labels(entries: &[Entry]) -> Vec<String> {
    let method = |e: &Entry| e.report.get("method").and_then(Value::as_str).unwrap_or("report").to_string();
    let names: Vec<String> = entries.iter().map(method).collect();
    names
        .iter()
        .enumerate()
        .map(|(i, n)| {
            if names.iter().filter(|m| *m == n).count() > 1 {
                format!("{n}[{}]", i + 1)
            } else {
                n.clone()
            }
        })
        .collect()
}

pub fn compare(paths: &[PathBuf], metrics: Option<Vec<String>>, iteration: Option<usize>) -> Result<Comparison, Failure> {
    let mut entries = Vec::new();
    for p in paths {
        entries.extend(read_reports(p)?);
    }
    if entries.len() < 2 {
        return Err(Failure::Config("compare needs at least two reports".into()));
    }
    let metrics = metrics.unwrap_or_else(|| DEFAULT_METRICS.iter().map(|m| m.to_string()).collect());
    let columns = labels(&entries);
    let mut values = vec![Vec::with_capacity(entries.len()); metrics.len()];
    for (entry, label) in entries.iter().zip(&columns) {
        let record = select_record(entry, label, iteration)?;
        for (m, metric) in metrics.iter().enumerate() {
            let v = record
                .get(metric)
                .or_else(|| entry.report.get(metric))
                .and_then(Value::as_f64)
                .ok_or_else(|| {
                    Failure::Config(format!(
                        "metric `{metric}` missing from report `{label}` in {}",
                        entry.file.display()
                    ))
                })?;
            values[m].push(v);
        }
    }
    Ok(Comparison {
        columns,
        metrics,
        values,
    })
}

pub fn cmd_compare(
    paths: &[PathBuf],
    metrics: Option<Vec<String>>,
    iteration: Option<usize>,
    out: Option<&Path>,
) -> Result<Comparison, Failure> {
    let cmp = compare(paths, metrics, iteration)?;
    if let Some(out) = out {
        cta_core::io::write_string_atomic(out, &cmp.to_csv()?)?;
    }
    Ok(cmp)
}
