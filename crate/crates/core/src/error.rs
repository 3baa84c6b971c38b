use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the registration pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes do not agree with what an operation requires.
    #[error("dimension error: {0}")]
    Dimension(String),
    /// The input is well-formed but carries no usable signal (zero norm, all-zero channel).
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    /// A configuration value violates its documented range.
    #[error("configuration error: {0}")]
    Config(String),
    /// A caller broke a documented precondition.
    #[error("contract violation: {0}")]
    Contract(String),
    /// Not enough samples to run an estimator.
    #[error("insufficient data: need at least {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },
    /// The geometric configuration does not determine a unique solution.
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),
    /// A robust estimator produced no acceptable hypothesis.
    #[error("estimation failure: {0}")]
    EstimationFailure(String),
    /// NaN or infinity where a finite value was required.
    #[error("numerical failure: {0}")]
    Numerical(String),
    /// A serialized artifact could not be decoded.
    #[error("format error: {0}")]
    Format(String),
    /// Synthetic data generation could not satisfy its constraints.
    #[error("generation error: {0}")]
    Generation(String),
    #[error("I/O error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    ///
    /// 2 for configuration problems, 3 for data problems, 4 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Contract(_) => 2,
            Error::Numerical(_)
            | Error::EstimationFailure(_)
            | Error::DegenerateConfiguration(_) => 4,
            Error::Dimension(_)
            | Error::DegenerateInput(_)
            | Error::InsufficientData { .. }
            | Error::Format(_)
            | Error::Generation(_)
            | Error::Io { .. } => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
