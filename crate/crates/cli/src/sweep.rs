//! `cta sweep`: one full run per value of a single axis, plus an aggregate
//! table keyed by that value.

use std::path::Path;

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::run::{execute, resolve, RunOutput};
use crate::{Failure, Overrides};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Axis {
    /// Test-time adaptation passes.
    Iterations,
    /// Corruption severity of every target.
    Severity,
    /// Alignment temperature.
    Temperature,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::Iterations => "iterations",
            Axis::Severity => "severity",
            Axis::Temperature => "temperature",
        }
    }

    pub fn default_values(self) -> Vec<f64> {
        match self {
            Axis::Iterations => vec![0.0, 5.0, 10.0, 20.0, 50.0, 100.0],
            Axis::Severity => (0..=5).map(f64::from).collect(),
            Axis::Temperature => vec![0.01, 0.025, 0.05, 0.1, 0.25, 0.5],
        }
    }

    /// Applies `value` to a copy of `base`.
    fn apply(self, base: &ExperimentConfig, value: f64) -> Result<ExperimentConfig, Failure> {
        let integral = |max: f64| {
            if value.fract() == 0.0 && (0.0..=max).contains(&value) {
                Ok(value as usize)
            } else {
                Err(Failure::Config(format!(
                    "{} sweep value {value} must be an integer in 0..={max}",
                    self.name()
                )))
            }
        };
        let mut cfg = base.clone();
        match self {
            Axis::Iterations => cfg.pipeline.ttt.epochs = integral(1e6)?,
            Axis::Severity => {
                let severity = integral(5.0)? as u8;
                cfg.corruptions.iter_mut().for_each(|c| c.severity = severity);
                cfg.corruptions.dedup();
            }
            Axis::Temperature => cfg.pipeline.align.temperature = value,
        }
        cfg.out = base.out.join(format!("{}-{value}", self.name()));
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Serialize)]
struct Row<'a> {
    axis: &'static str,
    value: f64,
    method: &'a str,
    seed: u64,
    target: &'a str,
    iteration: usize,
    source_accuracy: f64,
    supervised_accuracy: Option<f64>,
    loss: f64,
    accuracy: f64,
    dbi: f64,
    drift: f64,
    source_distance: f64,
}

/// Final-iteration metrics of every report at every grid point.
pub fn write_aggregate(path: &Path, axis: Axis, points: &[(f64, RunOutput)]) -> Result<(), Failure> {
    cta_core::io::write_atomic(path, |w| {
        let mut out = csv::Writer::from_writer(w);
        for (value, run) in points {
            for point in &run.points {
                for r in &point.reports {
                    let Some(last) = r.last() else { continue };
                    out.serialize(Row {
                        axis: axis.name(),
                        value: *value,
                        method: &r.method,
                        seed: r.seed,
                        target: &r.target,
                        iteration: last.iteration,
                        source_accuracy: r.source_accuracy,
                        supervised_accuracy: point.supervised_accuracy,
                        loss: last.loss,
                        accuracy: last.accuracy,
                        dbi: last.dbi,
                        drift: last.drift,
                        source_distance: last.source_distance,
                    })?;
                }
            }
        }
        out.flush()?;
        Ok(())
    })?;
    Ok(())
}

/// Worker count: one in deterministic mode, otherwise `threads` (from
/// `CTA_THREADS`) or the available parallelism, never more than the points.
pub fn worker_count(deterministic: bool, threads: Option<usize>, points: usize) -> usize {
    if deterministic {
        return 1;
    }
    let available = std::thread::available_parallelism().map_or(1, |n| n.get());
    threads.unwrap_or(available).max(1).min(points.max(1))
}

pub fn cmd_sweep(
    config: &Path,
    overrides: &Overrides,
    axis: Axis,
    values: Option<Vec<f64>>,
    threads: Option<usize>,
) -> Result<Vec<(f64, RunOutput)>, Failure> {
    let base = resolve(config, overrides)?;
    let values = values.unwrap_or_else(|| axis.default_values());
    if values.is_empty() {
        return Err(Failure::Config("sweep needs at least one value".into()));
    }
    let grid = values
        .iter()
        .map(|&v| axis.apply(&base, v).map(|cfg| (v, cfg)))
        .collect::<Result<Vec<_>, _>>()?;

    let workers = worker_count(overrides.deterministic, threads, grid.len());
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Failure::Internal(e.to_string()))?;
    let results: Vec<Result<RunOutput, Failure>> = pool.install(|| {
        use rayon::prelude::*;
        grid.par_iter().map(|(_, cfg)| execute(cfg, overrides.deterministic)).collect()
    });
    let mut points = Vec::with_capacity(grid.len());
    for ((value, _), result) in grid.iter().zip(results) {
        points.push((*value, result?));
    }
    write_aggregate(&base.out.join("sweep.csv"), axis, &points)?;
    Ok(points)
}
