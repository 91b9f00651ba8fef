//! Error types shared across the library.
//!
//! Numerical failures carry enough context to locate the failing computation:
//! SGD attaches the update step index, federation attaches vehicle id and round,
//! CSV ingestion attaches line/row numbers.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A model or controller parameter violated its domain constraint.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// An operation argument violated a precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Cholesky factorization failed after exhausting the jitter ladder.
    #[error(
        "factorization failed after jitter escalation (last attempted jitter {attempted_jitter:e})"
    )]
    Numerical { attempted_jitter: f64 },

    /// The optimizer produced a non-finite gradient.
    #[error("non-finite gradient at update step {step}")]
    NanGradient { step: usize },

    /// A nested failure during one SGD update step.
    #[error("update step {step} failed: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    /// A nested failure in one vehicle's local work during federation.
    #[error("vehicle {vehicle_id} failed in round {round}: {source}")]
    Vehicle {
        vehicle_id: String,
        round: usize,
        #[source]
        source: Box<Error>,
    },

    /// Input text could not be parsed.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Parsed data violated an invariant.
    #[error("validation error at row {row}: {message}")]
    Validation { row: usize, message: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
