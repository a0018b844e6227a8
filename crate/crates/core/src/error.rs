//! Error type shared by every stage of the pipeline.

use thiserror::Error;

/// Result alias used across the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("gap in series at line {line}: missing slot {missing}")]
    Gap { line: usize, missing: String },

    #[error("timestamps not strictly increasing at line {line}")]
    NonIncreasing { line: usize },

    #[error("timestamp at line {line} is not aligned to the slot width")]
    Misaligned { line: usize },

    #[error("negative value {value} at line {line}")]
    NegativeValue { line: usize, value: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("series too short: need at least {needed} values, got {got}")]
    TooShort { needed: usize, got: usize },

    #[error("insufficient history: need {needed} values, got {got}")]
    InsufficientHistory { needed: usize, got: usize },

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("category {0} has no points")]
    EmptyCategory(&'static str),

    #[error("covariance is not positive definite even with jitter {jitter:e}")]
    Factorization { jitter: f64 },

    #[error("objective is not finite")]
    NonFinite,

    #[error("optimizer did not converge after {0} iterations")]
    NoConvergence(usize),

    #[error("index range {from}..={to} outside 0..{len}")]
    Range { from: usize, to: usize, len: usize },

    #[error("config: {0}")]
    Config(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("{stage} failed{}: {source}", step.map(|s| format!(" at step {s}")).unwrap_or_default())]
    Stage {
        stage: String,
        step: Option<usize>,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// Wraps `self` with the pipeline stage (and optional step) it came from.
    pub fn in_stage(self, stage: &str, step: Option<usize>) -> Self {
        Error::Stage {
            stage: stage.to_string(),
            step,
            source: Box::new(self),
        }
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &str, step: Option<usize>) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &str, step: Option<usize>) -> Result<T> {
        self.map_err(|e| e.in_stage(stage, step))
    }
}
