//! Experiment harness behind the `rankabs` binary.
//!
//! Every command reads an [`config::ExperimentConfig`], writes CSV files into
//! an output directory and returns its table so tests can inspect it directly.

pub mod commands;
pub mod config;

use std::path::{Path, PathBuf};

use rankabs::bounds::BoundError;
use rankabs::distribution::DistributionError;
use rankabs::hypothesis::HypothesisError;
use rankabs::losses::LossError;
use rankabs::risk::RiskError;
use rankabs::trainer::TrainError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{}line {line}: {message}", file.as_ref().map(|f| format!("{}: ", f.display())).unwrap_or_default())]
    Config { file: Option<PathBuf>, line: usize, message: String },
    #[error("{0}")]
    Validation(String),
    #[error("{}: {message}", path.display())]
    Io { path: PathBuf, message: String },
    #[error("{violations} of {checks} bound checks violated")]
    BoundViolation { violations: usize, checks: usize },
    #[error("numerical fault: {0}")]
    Numerical(String),
}

impl CliError {
    pub const EXIT_VALIDATION: i32 = 1;
    pub const EXIT_BOUND_VIOLATION: i32 = 2;
    pub const EXIT_NUMERICAL: i32 = 3;

    pub fn config(line: usize, message: impl Into<String>) -> Self {
        CliError::Config { file: None, line, message: message.into() }
    }

    pub fn io(path: &Path, err: impl std::fmt::Display) -> Self {
        CliError::Io { path: path.to_path_buf(), message: err.to_string() }
    }

    pub(crate) fn in_file(self, path: &Path) -> Self {
        match self {
            CliError::Config { line, message, .. } => CliError::Config { file: Some(path.to_path_buf()), line, message },
            other => other,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } | CliError::Validation(_) | CliError::Io { .. } => Self::EXIT_VALIDATION,
            CliError::BoundViolation { .. } => Self::EXIT_BOUND_VIOLATION,
            CliError::Numerical(_) => Self::EXIT_NUMERICAL,
        }
    }
}

fn from_loss(e: LossError) -> CliError {
    match e {
        LossError::NonFinite(_) | LossError::Saturated(_) => CliError::Numerical(e.to_string()),
        LossError::InvalidParameter(_) => CliError::Validation(e.to_string()),
    }
}

impl From<LossError> for CliError {
    fn from(e: LossError) -> Self {
        from_loss(e)
    }
}

impl From<HypothesisError> for CliError {
    fn from(e: HypothesisError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<DistributionError> for CliError {
    fn from(e: DistributionError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<RiskError> for CliError {
    fn from(e: RiskError) -> Self {
        match e {
            RiskError::Loss(l) => from_loss(l),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<BoundError> for CliError {
    fn from(e: BoundError) -> Self {
        match e {
            BoundError::Risk(r) => r.into(),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NonFiniteGradient { .. } | TrainError::Diverged { .. } => CliError::Numerical(e.to_string()),
            TrainError::Loss(l) => from_loss(l),
            other => CliError::Validation(other.to_string()),
        }
    }
}
