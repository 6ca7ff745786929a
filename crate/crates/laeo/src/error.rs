use std::fmt::Display;
use std::io;
use std::path::{Path, PathBuf};

/// Exit code for malformed input, bad configuration or failed checks.
pub const EXIT_VALIDATION: i32 = 1;
/// Exit code for file-system failures.
pub const EXIT_IO: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Io { .. } => EXIT_IO,
        }
    }
}

impl From<laeo_core::Error> for CliError {
    fn from(e: laeo_core::Error) -> Self {
        CliError::Validation(e.to_string())
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

pub fn invalid(msg: impl Display) -> CliError {
    CliError::Validation(msg.to_string())
}

/// Wraps an `io::Error` with the path it concerns.
pub fn io_at(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}
