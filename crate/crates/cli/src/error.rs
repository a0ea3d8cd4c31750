use std::path::PathBuf;

use dimred_ct::Error as CoreError;

/// Process exit status for each failure class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitCode {
    Config = 2,
    Io = 3,
    Numerical = 4,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    File { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Core(#[from] CoreError),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        Self::Config(msg.into())
    }

    pub fn exit_code(&self) -> ExitCode {
        match self {
            Self::Config(_) => ExitCode::Config,
            Self::File { .. } => ExitCode::Io,
            Self::Core(e) => match e.root() {
                CoreError::Io(_) | CoreError::Format(_) => ExitCode::Io,
                CoreError::NumericalRank { .. } | CoreError::Singular(_) | CoreError::ZeroTruth => ExitCode::Numerical,
                _ => ExitCode::Config,
            },
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

/// Attaches the path to an I/O error.
pub fn io_at<T>(path: &std::path::Path, r: std::io::Result<T>) -> Result<T> {
    r.map_err(|source| CliError::File { path: path.to_path_buf(), source })
}
