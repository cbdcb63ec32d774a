use std::io;
use std::path::PathBuf;

use convexify_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("missing input {path}: {reason}")]
    MissingInput { path: PathBuf, reason: String },
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

impl CliError {
    /// 0 ok, 2 configuration, 3 numerical failure, 4 missing input.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Format { .. } => 2,
            CliError::Numerical(_) => 3,
            CliError::MissingInput { .. } => 4,
            CliError::Io { source, .. } if source.kind() == io::ErrorKind::NotFound => 4,
            CliError::Io { .. } => 2,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        let path = path.into();
        if source.kind() == io::ErrorKind::NotFound {
            CliError::MissingInput { path, reason: source.to_string() }
        } else {
            CliError::Io { path, source }
        }
    }

    pub fn format(path: impl Into<PathBuf>, reason: impl ToString) -> Self {
        CliError::Format { path: path.into(), reason: reason.to_string() }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Cfl { .. }
            | CoreError::ForwardBlowup { .. }
            | CoreError::NonFinite { .. }
            | CoreError::NoArrival { .. }
            | CoreError::Infeasible { .. }
            | CoreError::Stall { .. }
            | CoreError::NonConvergence { .. }
            | CoreError::Degenerate(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}
