use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input file; `line` is 1-based and counts the header.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// A dataset with zero rows where at least one is required.
    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    /// A precondition on an argument was violated.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A numeric computation produced a non-finite or otherwise unusable
    /// result (singular solve, rank-deficient retraction, NaN loss).
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Mismatch between a cached forward pass and the network it came from.
    #[error("stale cache: {0}")]
    StaleCache(String),

    /// An inner error tagged with where it happened (round, batch, ...).
    #[error("{context}: {source}")]
    WithContext {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::WithContext {
            context: context.into(),
            source: Box::new(self),
        }
    }
}

/// Adds location context to the error of a fallible step.
pub trait Contextualize<T> {
    fn context_with(self, f: impl FnOnce() -> String) -> Result<T>;
}

impl<T> Contextualize<T> for Result<T> {
    fn context_with(self, f: impl FnOnce() -> String) -> Result<T> {
        self.map_err(|e| e.context(f()))
    }
}
