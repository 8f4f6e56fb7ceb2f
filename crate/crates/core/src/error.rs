use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A value does not conform to the declared column type.
    #[error("type error: {0}")]
    Type(String),

    /// A value cannot be represented (fixed-point overflow, inverted range).
    #[error("range error: {0}")]
    Range(String),

    #[error("row {row} out of bounds for block of {len} rows")]
    Index { row: usize, len: usize },

    #[error("entity '{entity}' hashes to bucket {expected}, not {bucket}")]
    Partition {
        entity: String,
        bucket: u32,
        expected: u32,
    },

    /// Descriptor or document parse failure; `path` locates the offending element.
    #[error("{path}: {message}")]
    Parse { path: String, message: String },

    #[error("unknown id: {0}")]
    Id(String),

    /// All violations found while validating a query document.
    #[error("query validation failed: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error("planning failed: {0}")]
    Plan(String),

    /// Malformed import container.
    #[error("container format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }
}
