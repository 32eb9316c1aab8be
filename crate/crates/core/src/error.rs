use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A check whose preconditions do not hold for the given inputs.
    #[error("not applicable: {0}")]
    NotApplicable(String),

    /// A non-finite loss; `partial` holds the steps logged before it, when
    /// the run keeps a trajectory.
    #[error("training diverged at step {step}")]
    Diverged {
        step: usize,
        partial: Option<Box<crate::trainer::TrajectoryLog>>,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
