use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to parse {what}: {message}")]
    Parse { what: &'static str, message: String },

    #[error("invalid topology: {}", .0.join("; "))]
    InvalidTopology(Vec<String>),

    #[error("invalid demand matrix: {0}")]
    InvalidDemand(String),

    #[error("invalid tunnel: {0}")]
    InvalidTunnel(String),

    #[error("trace too short: {len} matrices, need at least {needed}")]
    TraceTooShort { len: usize, needed: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("pair ({src},{dst}) has positive demand but no routing mass")]
    Unroutable { src: usize, dst: usize },

    #[error("demand {value} on pair ({src},{dst}) is below the minimum positive demand {epsilon}")]
    DemandBelowEpsilon {
        src: usize,
        dst: usize,
        value: f64,
        epsilon: f64,
    },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("training diverged at step {step}: {reason}")]
    Diverged { step: usize, reason: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("decision space too large for grid search: {dimension} dimensions (limit {limit})")]
    GridTooLarge { dimension: usize, limit: usize },

    #[error("could not draw an admissible failure scenario after {attempts} attempts")]
    FailureRetriesExhausted { attempts: usize },

    #[error("{stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(what: &'static str, message: impl ToString) -> Self {
        Error::Parse {
            what,
            message: message.to_string(),
        }
    }

    /// Wraps an error with the pipeline stage that produced it.
    pub fn in_stage(self, stage: impl Into<String>) -> Self {
        Error::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }
}
