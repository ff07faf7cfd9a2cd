use std::io;

use thiserror::Error;

/// Errors raised anywhere in the pipeline.
///
/// Variants map onto the CLI exit codes: configuration problems, data
/// problems and numeric failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("config: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: Vec<usize>, got: Vec<usize> },
    #[error("disconnected flow field")]
    DisconnectedFlowField,
    #[error("unreachable tour waypoint {index} at ({x:.3}, {y:.3})")]
    UnreachableWaypoint { index: usize, x: f64, y: f64 },
    #[error("actor {index} spawned inside an obstacle")]
    ActorInObstacle { index: usize },
    #[error("missing SOGM layer {layer} (t = {time:.3} s)")]
    MissingLayer { layer: usize, time: f64 },
    #[error("pose {index} at ({x:.3}, {y:.3}) is outside the grid")]
    OutOfGrid { index: usize, x: f64, y: f64 },
    #[error("undefined recall: ground truth has no positives")]
    UndefinedRecall,
    #[error("training diverged at batch {batch}")]
    Diverged { batch: usize },
    #[error("bad file format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    /// Process exit code used by the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Diverged { .. } => 4,
            _ => 3,
        }
    }

    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Diverged { .. } => "numeric",
            Error::Io(_) => "io",
            Error::Format(_) => "format",
            _ => "data",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
