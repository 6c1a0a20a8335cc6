use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("data error at row {row}: {message}")]
    Data { row: usize, message: String },

    #[error("invalid cohort: {0}")]
    Cohort(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("fit error: {0}")]
    Fit(String),

    #[error("degenerate window: {count} weighted points ({distinct} distinct)")]
    DegenerateWindow { count: usize, distinct: usize },

    #[error("bandwidth error: {0}")]
    Bandwidth(String),

    #[error("invalid configuration `{field}`: {message}")]
    Config { field: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse grouping used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Estimation,
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config { field: field.into(), message: message.into() }
    }

    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Config { .. } | Error::Json(_) => ErrorCategory::Config,
            Error::Schema(_)
            | Error::Parse { .. }
            | Error::Data { .. }
            | Error::Cohort(_)
            | Error::Io(_)
            | Error::Csv(_) => ErrorCategory::Data,
            Error::Input(_)
            | Error::Fit(_)
            | Error::DegenerateWindow { .. }
            | Error::Bandwidth(_) => ErrorCategory::Estimation,
        }
    }
}
