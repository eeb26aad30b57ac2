//! `cta run`: every configured method for every (corruption, seed) point.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use cta_core::data::{CorruptionSpec, Dataset, Split, SHAPE_CHANNELS};
use cta_core::io::write_string_atomic;
use cta_core::metrics::RunReport;
use cta_core::models::save_checkpoint;
use cta_core::pipeline::{run_experiment, ExperimentData, HashSnapshot, StageLog};
use cta_core::Tensor;

use crate::config::{DataSource, ExperimentConfig};
use crate::{Failure, Overrides};

pub const CHECKPOINT_FILE: &str = "checkpoint.ctac";

/// Results of one (corruption, seed) grid point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointOutput {
    pub seed: u64,
    pub target: String,
    /// Checkpoint directory relative to the run's output directory.
    pub dir: String,
    pub supervised_accuracy: Option<f64>,
    pub reports: Vec<RunReport>,
    pub logs: Vec<StageLog>,
    pub hashes: Vec<HashSnapshot>,
}

/// Contents of `report.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunOutput {
    pub config: serde_json::Value,
    pub points: Vec<PointOutput>,
    /// Wall-clock time; omitted in deterministic mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elapsed_seconds: Option<f64>,
}

impl RunOutput {
    pub fn reports(&self) -> impl Iterator<Item = &RunReport> {
        self.points.iter().flat_map(|p| p.reports.iter())
    }
}

/// Loads `path` and applies command-line overrides, then validates.
pub fn resolve(path: &Path, overrides: &Overrides) -> Result<ExperimentConfig, Failure> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(out) = &overrides.out {
        cfg.out = out.clone();
    }
    if let Some(seed) = overrides.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(data) = &overrides.data {
        cfg.data.source = DataSource::parse(data);
    }
    if cfg.data.source == DataSource::Synthetic {
        cfg.pipeline.encoder.input_shape = (SHAPE_CHANNELS, cfg.data.image_size, cfg.data.image_size);
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_data(cfg: &ExperimentConfig, corruption: CorruptionSpec, seed: u64) -> Result<ExperimentData, Failure> {
    let data = match &cfg.data.source {
        DataSource::Synthetic => ExperimentData::synthetic(&cfg.data_config(corruption, seed))?,
        DataSource::Directory(dir) => {
            let part = |name: &str, split| {
                let images = dir.join(format!("{name}_images.ctat"));
                let labels = dir.join(format!("{name}_labels.ctat"));
                Dataset::load(&images, &labels, split).map_err(|e| match e {
                    cta_core::Error::Io(io) => Failure::Io(format!("{}: {io}", images.display())),
                    other => Failure::from(other),
                })
            };
            let train = part("train", Split::SourceTrain)?;
            let test = part("test", Split::SourceTest)?;
            ExperimentData::from_splits(train, test, corruption, cfg.data.seed.unwrap_or(seed))?
        }
    };
    let shape = data.source_train.image_shape();
    if shape != cfg.pipeline.encoder.input_shape {
        return Err(Failure::Config(format!(
            "invalid config key `pipeline.encoder.input_shape`: {:?} does not match the data's {shape:?}",
            cfg.pipeline.encoder.input_shape
        )));
    }
    Ok(data)
}

fn point_dir(cfg: &ExperimentConfig, corruption: CorruptionSpec, seed: u64) -> String {
    if cfg.corruptions.len() * cfg.seeds.len() == 1 {
        String::new()
    } else {
        format!("{}-{}_seed{seed}", corruption.kind, corruption.severity)
    }
}

/// Runs a resolved config, writing checkpoints, `report.csv` and
/// `report.json` under `cfg.out`.
pub fn execute(cfg: &ExperimentConfig, deterministic: bool) -> Result<RunOutput, Failure> {
    let start = Instant::now();
    let snapshot = serde_json::to_value(cfg).map_err(|e| Failure::Internal(e.to_string()))?;
    let mut points = Vec::new();
    for &corruption in &cfg.corruptions {
        for &seed in &cfg.seeds {
            let data = load_data(cfg, corruption, seed)?;
            let rel = point_dir(cfg, corruption, seed);
            let base = cfg.out.join(&rel);
            let mut sink = |stage: &str, entries: Vec<(String, Tensor)>| {
                save_checkpoint(&base.join(stage).join(CHECKPOINT_FILE), &entries)
            };
            let outcome = run_experiment(&cfg.pipeline, &data, seed, &cfg.methods, &snapshot, &mut sink)?;
            points.push(PointOutput {
                seed,
                target: data.target_name.clone(),
                dir: rel,
                supervised_accuracy: outcome.supervised_accuracy,
                reports: outcome.reports,
                logs: outcome.logs,
                hashes: outcome.hashes,
            });
        }
    }
    let output = RunOutput {
        config: snapshot,
        points,
        elapsed_seconds: (!deterministic).then(|| start.elapsed().as_secs_f64()),
    };
    write_outputs(&cfg.out, &output)?;
    Ok(output)
}

pub fn write_outputs(out: &Path, output: &RunOutput) -> Result<(), Failure> {
    let reports: Vec<RunReport> = output.reports().cloned().collect();
    cta_core::io::write_atomic(&out.join("report.csv"), |w| RunReport::write_csv(&reports, w))?;
    let json = serde_json::to_string_pretty(output).map_err(|e| Failure::Internal(e.to_string()))?;
    write_string_atomic(&out.join("report.json"), &json)?;
    Ok(())
}

pub fn cmd_run(config: &Path, overrides: &Overrides) -> Result<RunOutput, Failure> {
    let cfg = resolve(config, overrides)?;
    execute(&cfg, overrides.deterministic)
}

/// One line per report: method, seed, target and accuracy before and after
/// adaptation.
pub fn summary(output: &RunOutput) -> String {
    let mut text = format!(
        "{:<10} {:>5} {:<18} {:>8} {:>8} {:>8} {:>6} {:>8}\n",
        "method", "seed", "target", "source", "acc@0", "acc@end", "iters", "drift"
    );
    for r in output.reports() {
        let (first, last) = match (r.first(), r.last()) {
            (Some(f), Some(l)) => (f, l),
            _ => continue,
        };
        text += &format!(
            "{:<10} {:>5} {:<18} {:>8.4} {:>8.4} {:>8.4} {:>6} {:>8.4}\n",
            r.method, r.seed, r.target, r.source_accuracy, first.accuracy, last.accuracy, last.iteration, last.drift
        );
    }
    text
}

/// Checkpoint path of `stage` within `out` for a point directory.
pub fn checkpoint_path(out: &Path, point_dir: &str, stage: &str) -> PathBuf {
    out.join(point_dir).join(stage).join(CHECKPOINT_FILE)
}
