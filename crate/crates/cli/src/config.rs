//! Experiment configuration files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use cta_core::data::{CorruptionKind, CorruptionSpec};
use cta_core::pipeline::{DataConfig, Method, PipelineConfig};

use crate::Failure;

/// Where source images come from: the built-in shapes generator or a
/// directory holding `train_images.ctat`, `train_labels.ctat`,
/// `test_images.ctat` and `test_labels.ctat`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DataSource {
    Synthetic,
    Directory(PathBuf),
}

impl DataSource {
    pub fn parse(s: &str) -> Self {
        if s == "synthetic" {
            DataSource::Synthetic
        } else {
            DataSource::Directory(PathBuf::from(s))
        }
    }
}

impl Serialize for DataSource {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            DataSource::Synthetic => s.serialize_str("synthetic"),
            DataSource::Directory(p) => s.serialize_str(&p.to_string_lossy()),
        }
    }
}

impl<'de> Deserialize<'de> for DataSource {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Ok(DataSource::parse(&String::deserialize(d)?))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub source: DataSource,
    /// Synthetic generator settings; ignored for directory sources.
    pub classes: usize,
    pub samples: usize,
    pub image_size: usize,
    /// Held-out fraction for synthetic data.
    pub test_fraction: f64,
    /// Dataset seed. `null` follows the run seed.
    pub seed: Option<u64>,
}

impl Default for DataSection {
    fn default() -> Self {
        let d = DataConfig::default();
        DataSection {
            source: DataSource::Synthetic,
            classes: d.classes,
            samples: d.samples,
            image_size: d.image_size,
            test_fraction: d.test_fraction,
            seed: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSection,
    pub pipeline: PipelineConfig,
    /// Target domains; every corruption runs for every seed.
    pub corruptions: Vec<CorruptionSpec>,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: DataSection::default(),
            pipeline: PipelineConfig::default(),
            corruptions: vec![CorruptionSpec {
                kind: CorruptionKind::GaussianNoise,
                severity: 5,
            }],
            methods: vec![Method::Cta, Method::CtaC, Method::YModel],
            seeds: vec![0],
            out: PathBuf::from("runs"),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), Failure> {
        let bad = |key: &str, reason: &str| Err(Failure::Config(format!("invalid config key `{key}`: {reason}")));
        if self.data.source == DataSource::Synthetic {
            if self.data.classes < 2 {
                return bad("data.classes", "need at least two classes");
            }
            if self.data.samples < 2 * self.data.classes {
                return bad("data.samples", "need at least two samples per class");
            }
            if self.data.image_size < 4 {
                return bad("data.image_size", "must be at least 4");
            }
            if !(self.data.test_fraction > 0.0 && self.data.test_fraction < 1.0) {
                return bad("data.test_fraction", "must lie strictly between 0 and 1");
            }
        }
        if self.corruptions.is_empty() {
            return bad("corruptions", "list at least one target corruption");
        }
        if let Some(c) = self.corruptions.iter().find(|c| c.validate().is_err()) {
            return bad("corruptions.severity", &format!("severity {} outside 0..=5", c.severity));
        }
        if self.methods.is_empty() {
            return bad("methods", "list at least one method");
        }
        if self.seeds.is_empty() {
            return bad("seeds", "list at least one seed");
        }
        self.pipeline.validate().map_err(|e| match e {
            cta_core::Error::Config { key, reason } => {
                Failure::Config(format!("invalid config key `pipeline.{key}`: {reason}"))
            }
            other => Failure::from(other),
        })?;
        if self.pipeline.encoder.input_shape.1 != self.pipeline.encoder.input_shape.2 {
            return bad("pipeline.encoder.input_shape", "images must be square");
        }
        Ok(())
    }

    /// Synthetic data settings for one grid point.
    pub fn data_config(&self, corruption: CorruptionSpec, run_seed: u64) -> DataConfig {
        DataConfig {
            classes: self.data.classes,
            samples: self.data.samples,
            image_size: self.data.image_size,
            test_fraction: self.data.test_fraction,
            corruption,
            seed: self.data.seed.unwrap_or(run_seed),
        }
    }
}
