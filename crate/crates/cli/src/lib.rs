//! Experiment runner behind the `cta` binary.
//!
//! Exit codes: 0 success, 2 invalid configuration or input, 3 training
//! diverged, 4 I/O failure, 1 anything else.

use std::fmt;
use std::path::PathBuf;

pub mod compare;
pub mod config;
pub mod eval;
pub mod run;
pub mod sweep;

pub use config::{DataSection, DataSource, ExperimentConfig};

#[derive(Debug)]
pub enum Failure {
    Config(String),
    Divergence(String),
    Io(String),
    Internal(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Internal(_) => 1,
            Failure::Config(_) => 2,
            Failure::Divergence(_) => 3,
            Failure::Io(_) => 4,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(m) | Failure::Divergence(m) | Failure::Io(m) | Failure::Internal(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for Failure {}

impl From<cta_core::Error> for Failure {
    fn from(e: cta_core::Error) -> Self {
        use cta_core::Error as E;
        let msg = e.to_string();
        match e {
            E::Config { .. } | E::InvalidArgument(_) | E::Empty(_) | E::MissingClass(_) | E::InvalidLabel { .. } => {
                Failure::Config(msg)
            }
            E::Divergence { .. } | E::NonFinite { .. } => Failure::Divergence(msg),
            E::Io(_) | E::Json(_) | E::Csv(_) | E::Format(_) => Failure::Io(msg),
            _ => Failure::Internal(msg),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

/// Command-line settings that override the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub deterministic: bool,
    pub data: Option<String>,
}
