use thiserror::Error;

/// Error type shared across the crate.
#[derive(Debug, Error)]
pub enum CrmError {
    /// Invalid configuration: bad probabilities, unknown kinds, missing fields.
    #[error("configuration error: {0}")]
    Config(String),
    /// A named CSV column is absent from the header.
    #[error("schema error: missing column `{0}`")]
    Schema(String),
    /// A CSV cell failed to parse. Lines are 1-based and include the header.
    #[error("row error at line {line}: {message}")]
    Row { line: u64, message: String },
    /// An operation was invoked with arguments outside its contract.
    #[error("precondition error: {0}")]
    Precondition(String),
    /// The choose/observe step protocol was violated.
    #[error("protocol error: {0}")]
    Protocol(String),
    /// A bound or metric could not be evaluated on the given inputs.
    #[error("evaluation error: {0}")]
    Evaluation(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, CrmError>;
