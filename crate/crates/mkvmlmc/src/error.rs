use std::path::PathBuf;

/// Failures of the experiment runner, each tied to a process exit code.
#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Core(#[from] mkvmlmc_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),
}

impl AppError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        AppError::Invalid(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AppError::Io {
            path: path.into(),
            source,
        }
    }

    /// `2` for validation errors, `3` for numerical aborts, `1` for I/O.
    pub fn exit_code(&self) -> u8 {
        match self {
            AppError::Invalid(_) => 2,
            AppError::Core(e) if e.is_numerical() => 3,
            AppError::Core(_) => 2,
            AppError::Io { .. } | AppError::Csv(_) => 1,
        }
    }
}
