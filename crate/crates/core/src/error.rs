use thiserror::Error;

/// Errors produced while building bases, fitting models, or reading data.
#[derive(Debug, Error)]
pub enum SlosError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("ill-conditioned system at iteration {iteration}: {detail}")]
    IllConditioned { iteration: usize, detail: String },

    #[error("no valid configuration: {0}")]
    NoValidConfiguration(String),

    #[error("study failed: {failed} of {total} replicates failed")]
    StudyFailed { failed: usize, total: usize },

    #[error("parse error at row {row}, column {column}: {detail}")]
    Parse { row: usize, column: usize, detail: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, SlosError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(SlosError::InvalidArgument(msg.into()))
}
