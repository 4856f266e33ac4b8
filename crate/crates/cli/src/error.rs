use std::path::PathBuf;

use beam_core::asgraph::AsGraphError;
use beam_core::embedding::EmbeddingError;
use beam_core::monitor::MonitorError;
use beam_core::synth::SynthError;
use beam_core::validator::ValidatorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("missing input file {}", .0.display())]
    MissingFile(PathBuf),
    #[error("{}: {source}", .path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {reason}", .path.display())]
    Malformed { path: PathBuf, reason: String },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("replay order violated: {0}")]
    OrderViolation(String),
    #[error("{0}")]
    NotFound(String),
    #[error("synthesis failed: {0}")]
    Synthesis(String),
}

impl CliError {
    /// Process exit status; clap's own usage errors exit with 2 as well.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::MissingFile(_) => 3,
            CliError::Io { .. } => 4,
            CliError::Malformed { .. } => 5,
            CliError::InvalidParameter(_) => 6,
            CliError::OrderViolation(_) => 7,
            CliError::NotFound(_) => 8,
            CliError::Synthesis(_) => 9,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    pub fn malformed(path: impl Into<PathBuf>, reason: impl ToString) -> Self {
        CliError::Malformed { path: path.into(), reason: reason.to_string() }
    }

    pub fn graph(path: impl Into<PathBuf>, e: AsGraphError) -> Self {
        match e {
            AsGraphError::Io(source) => CliError::io(path, source),
            AsGraphError::InvalidRatio(_) => CliError::InvalidParameter(e.to_string()),
            AsGraphError::MissingRouteUsage(_) => CliError::Config(format!("{e}; set route_usage")),
            other => CliError::malformed(path, other),
        }
    }

    pub fn embedding(path: impl Into<PathBuf>, e: EmbeddingError) -> Self {
        match e {
            EmbeddingError::Io(source) => CliError::io(path, source),
            EmbeddingError::InvalidHyperparams(m) => CliError::InvalidParameter(m),
            other => CliError::malformed(path, other),
        }
    }

    pub fn monitor(path: impl Into<PathBuf>, e: MonitorError) -> Self {
        match e {
            MonitorError::Io(source) => CliError::io(path, source),
            MonitorError::ClockSkewViolation { .. } => CliError::OrderViolation(e.to_string()),
            other => CliError::malformed(path, other),
        }
    }

    pub fn validator(path: impl Into<PathBuf>, e: ValidatorError) -> Self {
        match e {
            ValidatorError::Io(source) => CliError::io(path, source),
            other => CliError::malformed(path, other),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::InvalidSpec(m) => CliError::InvalidParameter(m),
            other => CliError::Synthesis(other.to_string()),
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
