use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("I/O error on {path}: {reason}")]
    Io { path: PathBuf, reason: String },
    #[error(transparent)]
    Core(#[from] mwslc::Error),
}

impl CliError {
    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            reason: e.to_string(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        use mwslc::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Io { .. } => 4,
            CliError::Core(e) => match e {
                E::Io { .. } | E::Format(_) | E::Unsupported(_) => 4,
                E::Numeric(_) | E::Training { .. } | E::DegenerateInput(_) => 3,
                E::Size(_)
                | E::Config(_)
                | E::Index { .. }
                | E::Spec(_)
                | E::Shape(_)
                | E::Collision { .. }
                | E::Argument(_) => 2,
            },
        }
    }
}
