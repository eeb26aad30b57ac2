use serde::{Deserialize, Serialize};

use crate::data::AugmentationConfig;
use crate::error::{Error, Result};
use crate::losses::{Anchoring, Temperature};
use crate::models::EncoderConfig;
use crate::optim::ScheduleConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    SourceSupervised,
    SourceSelfsup,
    Align,
    Ttt,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::SourceSupervised => "source_supervised",
            Stage::SourceSelfsup => "source_selfsup",
            Stage::Align => "align",
            Stage::Ttt => "ttt",
        }
    }

    /// Temperature used unless a config overrides it.
    pub fn default_temperature(self) -> f64 {
        match self {
            Stage::Align => 0.5,
            _ => 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LearningRate {
    /// Linear warmup then cosine annealing, stepped per batch.
    Cosine {
        start_lr: f64,
        final_lr: f64,
        warmup_epochs: usize,
    },
    Fixed { lr: f64 },
}

impl LearningRate {
    pub fn table_default() -> Self {
        LearningRate::Cosine {
            start_lr: 5e-4,
            final_lr: 1e-6,
            warmup_epochs: 2,
        }
    }

    /// Per-step schedule for a run of `epochs` epochs of `steps_per_epoch`
    /// batches; `None` for a fixed rate.
    pub fn schedule(&self, epochs: usize, steps_per_epoch: usize) -> Option<ScheduleConfig> {
        match *self {
            LearningRate::Cosine {
                start_lr,
                final_lr,
                warmup_epochs,
            } => Some(ScheduleConfig {
                start_lr,
                final_lr,
                total_epochs: epochs,
                warmup_epochs,
                steps_per_epoch,
            }),
            LearningRate::Fixed { .. } => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub stage: Stage,
    /// Epochs for training stages; passes over the target set for `ttt`.
    pub epochs: usize,
    pub batch_size: usize,
    pub temperature: f64,
    pub learning_rate: LearningRate,
    pub seed: u64,
}

impl StageConfig {
    /// Table defaults for training stages: 50 epochs, batch 256, cosine
    /// annealing 5e-4 to 1e-6 after 2 warmup epochs.
    pub fn source_default(stage: Stage) -> Self {
        StageConfig {
            stage,
            epochs: 50,
            batch_size: 256,
            temperature: stage.default_temperature(),
            learning_rate: LearningRate::table_default(),
            seed: 0,
        }
    }

    /// Test-time defaults: 20 passes, batch 128, fixed learning rate 1e-6.
    pub fn ttt_default() -> Self {
        StageConfig {
            stage: Stage::Ttt,
            epochs: 20,
            batch_size: 128,
            temperature: Stage::Ttt.default_temperature(),
            learning_rate: LearningRate::Fixed { lr: 1e-6 },
            seed: 0,
        }
    }

    pub fn tau(&self) -> Result<Temperature> {
        Temperature::new(self.temperature).map_err(|_| self.key_error("temperature", "must be positive and finite"))
    }

    fn key_error(&self, key: &str, reason: impl Into<String>) -> Error {
        Error::config(format!("{}.{key}", self.stage.name()), reason)
    }

    pub fn validate(&self, expected: Stage) -> Result<()> {
        if self.stage != expected {
            return Err(self.key_error(
                "stage",
                format!("expected `{}`, found `{}`", expected.name(), self.stage.name()),
            ));
        }
        self.tau()?;
        if self.batch_size < 2 {
            return Err(self.key_error("batch_size", "must be at least 2"));
        }
        if self.stage != Stage::Ttt && self.epochs == 0 {
            return Err(self.key_error("epochs", "must be at least 1"));
        }
        match &self.learning_rate {
            LearningRate::Fixed { lr } if !(lr.is_finite() && *lr >= 0.0) => {
                Err(self.key_error("learning_rate.lr", "must be finite and non-negative"))
            }
            LearningRate::Cosine { .. } => {
                let sched = self.learning_rate.schedule(self.epochs, 1).expect("cosine");
                if !(sched.start_lr.is_finite() && sched.start_lr > 0.0) {
                    return Err(self.key_error("learning_rate.start_lr", "must be positive"));
                }
                sched
                    .validate()
                    .map_err(|e| match e {
                        Error::Config { key, reason } => self.key_error(&format!("learning_rate.{key}"), reason),
                        other => other,
                    })
            }
            _ => Ok(()),
        }
    }
}

/// Which supervised quantity the aligned encoder is matched against.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TeacherKind {
    /// `w = f(x)`, the supervised encoder's features.
    Encoder,
    /// `w = h(f(x))`; only dimensionally valid when the class count equals
    /// the feature dimension.
    ClassifierLogits,
}

/// Models, objectives and per-stage settings of one experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub encoder: EncoderConfig,
    pub augmentation: AugmentationConfig,
    pub anchoring: Anchoring,
    pub teacher: TeacherKind,
    /// Let the supervised encoder train during alignment with an extra
    /// cross-entropy term. Declared but not implemented.
    pub unfrozen_teacher: bool,
    pub source_supervised: StageConfig,
    /// Also drives joint training of the Y-model baseline.
    pub source_selfsup: StageConfig,
    pub align: StageConfig,
    pub ttt: StageConfig,
    /// Classifier trained on frozen self-supervised features in the
    /// no-alignment ablation. A linear head on fixed inputs needs a larger
    /// step than the encoders do.
    pub cta_c_head: StageConfig,
    pub eval_batch_size: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            encoder: EncoderConfig::default(),
            augmentation: AugmentationConfig::default(),
            anchoring: Anchoring::OneSided,
            teacher: TeacherKind::Encoder,
            unfrozen_teacher: false,
            source_supervised: StageConfig::source_default(Stage::SourceSupervised),
            source_selfsup: StageConfig::source_default(Stage::SourceSelfsup),
            align: StageConfig::source_default(Stage::Align),
            ttt: StageConfig::ttt_default(),
            cta_c_head: StageConfig {
                learning_rate: LearningRate::Cosine {
                    start_lr: 1e-2,
                    final_lr: 1e-5,
                    warmup_epochs: 2,
                },
                ..StageConfig::source_default(Stage::SourceSupervised)
            },
            eval_batch_size: 256,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.augmentation.validate()?;
        self.source_supervised.validate(Stage::SourceSupervised)?;
        self.source_selfsup.validate(Stage::SourceSelfsup)?;
        self.align.validate(Stage::Align)?;
        self.ttt.validate(Stage::Ttt)?;
        self.cta_c_head
            .validate(Stage::SourceSupervised)
            .map_err(|e| match e {
                Error::Config { key, reason } => Error::config(key.replacen("source_supervised", "cta_c_head", 1), reason),
                other => other,
            })?;
        if self.unfrozen_teacher {
            return Err(Error::config(
                "unfrozen_teacher",
                "training the supervised encoder during alignment is not implemented; the frozen teacher is used",
            ));
        }
        if self.eval_batch_size == 0 {
            return Err(Error::config("eval_batch_size", "must be at least 1"));
        }
        Ok(())
    }

    /// Stage configs as a list, in execution order.
    pub fn stages(&self) -> [&StageConfig; 4] {
        [&self.source_supervised, &self.source_selfsup, &self.align, &self.ttt]
    }
}
