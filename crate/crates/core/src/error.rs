use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("{what} = {value} is outside the valid range {range}")]
    Range { what: &'static str, value: String, range: String },

    #[error("{0} outside the function's domain")]
    Domain(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),
}

impl Error {
    pub(crate) fn range(what: &'static str, value: impl ToString, range: impl ToString) -> Self {
        Error::Range { what, value: value.to_string(), range: range.to_string() }
    }
}
