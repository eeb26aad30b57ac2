use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Metrics measured after one adaptation pass (iteration 0 = before any
/// update).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Mean self-supervised loss over the pass; at iteration 0 it is measured
    /// with eval-mode forwards and no state change.
    pub loss: f64,
    pub accuracy: f64,
    /// Davies–Bouldin index of the monitored features on the target set.
    pub dbi: f64,
    /// Centroid drift of the monitored target features from iteration 0.
    pub drift: f64,
    /// Centroid distance between target features and the unadapted model's
    /// source-domain features.
    pub source_distance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub method: String,
    pub seed: u64,
    /// Target-domain description, e.g. `gaussian_noise/5`.
    pub target: String,
    /// Stages executed to produce the evaluated model, in order.
    pub stages: Vec<String>,
    /// Accuracy of the evaluated composition on clean source-test data.
    pub source_accuracy: f64,
    /// Resolved configuration of the run.
    pub config: serde_json::Value,
    records: Vec<IterationRecord>,
}

#[derive(Serialize)]
struct CsvRow<'a> {
    method: &'a str,
    seed: u64,
    target: &'a str,
    iteration: usize,
    loss: f64,
    accuracy: f64,
    dbi: f64,
    drift: f64,
    source_distance: f64,
}

impl RunReport {
    pub fn new(
        method: impl Into<String>,
        seed: u64,
        target: impl Into<String>,
        config: serde_json::Value,
    ) -> Self {
        RunReport {
            method: method.into(),
            seed,
            target: target.into(),
            stages: Vec::new(),
            source_accuracy: 0.0,
            config,
            records: Vec::new(),
        }
    }

    pub fn records(&self) -> &[IterationRecord] {
        &self.records
    }

    /// Appends a record; iterations must strictly increase and every value
    /// must be finite.
    pub fn push(&mut self, record: IterationRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if record.iteration <= last.iteration {
                return Err(Error::InvalidArgument(format!(
                    "iteration {} does not follow {}",
                    record.iteration, last.iteration
                )));
            }
        }
        let values = [
            record.loss,
            record.accuracy,
            record.dbi,
            record.drift,
            record.source_distance,
        ];
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "RunReport::push" });
        }
        self.records.push(record);
        Ok(())
    }

    pub fn first(&self) -> Option<&IterationRecord> {
        self.records.first()
    }

    pub fn last(&self) -> Option<&IterationRecord> {
        self.records.last()
    }

    pub fn at_iteration(&self, iteration: usize) -> Option<&IterationRecord> {
        self.records.iter().find(|r| r.iteration == iteration)
    }

    /// Writes one CSV row per (report, iteration) with a single header.
    pub fn write_csv<W: Write>(reports: &[RunReport], w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for report in reports {
            for r in &report.records {
                out.serialize(CsvRow {
                    method: &report.method,
                    seed: report.seed,
                    target: &report.target,
                    iteration: r.iteration,
                    loss: r.loss,
                    accuracy: r.accuracy,
                    dbi: r.dbi,
                    drift: r.drift,
                    source_distance: r.source_distance,
                })?;
            }
        }
        if reports.iter().all(|r| r.records.is_empty()) {
            out.write_record([
                "method",
                "seed",
                "target",
                "iteration",
                "loss",
                "accuracy",
                "dbi",
                "drift",
                "source_distance",
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(iteration: usize) -> IterationRecord {
        IterationRecord {
            iteration,
            loss: 1.5,
            accuracy: 0.5,
            dbi: 2.0,
            drift: 0.0,
            source_distance: 0.25,
        }
    }

    #[test]
    fn iterations_must_increase() {
        let mut r = RunReport::new("cta", 1, "gaussian_noise/5", serde_json::json!({}));
        r.push(record(0)).unwrap();
        r.push(record(3)).unwrap();
        assert!(r.push(record(3)).is_err());
        let mut bad = record(4);
        bad.dbi = f64::NAN;
        assert!(r.push(bad).is_err());
        assert_eq!(r.records().len(), 2);
    }

    #[test]
    fn csv_has_one_row_per_record() {
        let mut r = RunReport::new("cta", 1, "contrast/2", serde_json::json!({"k": 1}));
        r.push(record(0)).unwrap();
        r.push(record(1)).unwrap();
        let mut buf = Vec::new();
        RunReport::write_csv(&[r.clone(), r], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[0], "method,seed,target,iteration,loss,accuracy,dbi,drift,source_distance");
        assert_eq!(lines[1], "cta,1,contrast/2,0,1.5,0.5,2.0,0.0,0.25");
    }

    #[test]
    fn json_round_trip() {
        let mut r = RunReport::new("y_model", 9, "brightness/1", serde_json::json!({"tau": 0.01}));
        r.push(record(0)).unwrap();
        let s = serde_json::to_string(&r).unwrap();
        assert_eq!(serde_json::from_str::<RunReport>(&s).unwrap(), r);
    }
}
