use std::path::Path;

use msglmb_core::Error as CoreError;

/// Failure of a command, split by the exit code it maps to.
#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type AppResult<T> = Result<T, AppError>;

impl AppError {
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Config(_) => 2,
            AppError::Numerical(_) => 3,
        }
    }

    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        AppError::Config(format!("{}: {e}", path.display()))
    }
}

impl From<CoreError> for AppError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Numerical(_) | CoreError::Degenerate(_) => AppError::Numerical(e.to_string()),
            _ => AppError::Config(e.to_string()),
        }
    }
}
