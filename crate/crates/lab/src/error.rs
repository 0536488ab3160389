use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("cannot read config {path}: {source}")]
    ConfigRead { path: PathBuf, source: std::io::Error },

    #[error("invalid config: {0}")]
    Config(String),

    #[error(transparent)]
    Compute(#[from] vpme_core::Error),

    #[error("{0} trial(s) aborted; see summary.json")]
    Aborted(usize),

    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("malformed output: {0}")]
    Format(String),
}

impl LabError {
    /// Process exit status: 2 for configuration problems, 3 for numerical failures and aborts.
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::ConfigRead { .. } | LabError::Config(_) => 2,
            LabError::Compute(_) | LabError::Aborted(_) => 3,
            LabError::Io { .. } | LabError::Format(_) => 1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| LabError::Io { path, source }
    }
}

pub type Result<T> = std::result::Result<T, LabError>;

pub(crate) fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(LabError::Config(msg.into()))
}
