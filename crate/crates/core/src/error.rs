use thiserror::Error;

use crate::linalg::LinalgError;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A primitive was evaluated outside its admissible domain.
    #[error("domain error in `{primitive}`: {detail}")]
    Domain {
        primitive: &'static str,
        detail: String,
    },

    #[error("length mismatch for {what}: expected {expected}, got {got}")]
    Length {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("parameter layout mismatch: {0}")]
    Layout(String),

    #[error("expression is not scalar-valued (shape {rows}x{cols})")]
    NotScalar { rows: usize, cols: usize },

    #[error("invalid partition: {0}")]
    Partition(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("budget exceeded: {0}")]
    Budget(String),

    #[error("solver failure: {0}")]
    Solver(String),

    #[error(transparent)]
    Linalg(#[from] LinalgError),

    #[error("data error{}: {message}", location(.row, .column))]
    Data {
        row: Option<usize>,
        column: Option<String>,
        message: String,
    },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn location(row: &Option<usize>, column: &Option<String>) -> String {
    match (row, column) {
        (Some(r), Some(c)) => format!(" at row {r}, column `{c}`"),
        (Some(r), None) => format!(" at row {r}"),
        (None, Some(c)) => format!(" in column `{c}`"),
        (None, None) => String::new(),
    }
}

impl Error {
    pub(crate) fn data(message: impl Into<String>) -> Self {
        Error::Data {
            row: None,
            column: None,
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
