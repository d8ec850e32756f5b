use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the benchmark.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke a documented precondition (shape, range, dimension).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// Training or optimization produced NaN/Inf and was stopped.
    #[error("numerical abort at step {step}: {what}")]
    NumericalAbort { step: u64, what: String },

    #[error("malformed {kind} file: {msg}")]
    Format { kind: &'static str, msg: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("missing artifact: {}", .0.display())]
    MissingArtifact(PathBuf),

    #[error("expert failed to produce a successful {env} episode after {retries} retries (seed {seed})")]
    RetryExhausted {
        env: String,
        seed: u64,
        retries: usize,
    },

    #[error("rank-deficient Jacobian (smallest singular value {0:e})")]
    RankDeficient(f64),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Shorthand for a contract-violation error.
pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}

/// Fail with a contract violation unless `cond` holds.
macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err($crate::error::contract(format!($($fmt)+)));
        }
    };
}
pub(crate) use ensure;
