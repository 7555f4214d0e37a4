use std::path::Path;

use decomp_core::io::IoError;
use decomp_core::DecompError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {msg}")]
    Input { path: String, msg: String },
    #[error(transparent)]
    Core(#[from] DecompError),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.display().to_string(), source }
    }

    pub fn input(path: &Path, e: IoError) -> Self {
        match e {
            IoError::Io(source) => CliError::io(path, source),
            other => CliError::Input { path: path.display().to_string(), msg: other.to_string() },
        }
    }

    /// 1 usage, 2 I/O or ill-formed input, 3 internal invariant violation.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Io { .. } | CliError::Input { .. } => 2,
            CliError::Core(e) => match e {
                DecompError::InvalidParameter(_) | DecompError::Level { .. } | DecompError::Unsupported(_) => 1,
                _ => 3,
            },
            CliError::Internal(_) => 3,
        }
    }
}
