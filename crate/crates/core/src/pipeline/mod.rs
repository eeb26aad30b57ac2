//! The training stages, test-time adaptation, baselines and the experiment
//! runner that strings them together.

mod config;
mod runner;
mod stages;

pub use config::{LearningRate, PipelineConfig, Stage, StageConfig, TeacherKind};
pub use runner::{run_experiment, CheckpointSink, DataConfig, ExperimentData, HashSnapshot, Method, Outcome, NO_ADAPT};
pub use stages::{
    align_encoders, evaluate, linear_probe, teacher_features, test_time_adapt, train_head_on_features,
    train_source_selfsup, train_source_supervised, train_y_model, Composition, Evaluation, SelfSupervised, StageLog,
    Supervised, YModel,
};

#[cfg(test)]
mod tests;
