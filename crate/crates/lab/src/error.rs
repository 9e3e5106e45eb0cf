use std::path::PathBuf;

use mess3_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum LabError {
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("{0}")]
    Usage(String),
    #[error("missing artifact: {0}")]
    Missing(PathBuf),
    #[error("empty figure: {0}")]
    EmptyFigure(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed {what}: {reason}")]
    Format { what: String, reason: String },
}

impl LabError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LabError::Io { path: path.into(), source }
    }

    pub fn format(what: impl Into<String>, reason: impl ToString) -> Self {
        LabError::Format { what: what.into(), reason: reason.to_string() }
    }

    /// 2 for invalid input, 3 for training divergence, 4 for a missing
    /// artifact, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Usage(_) => 2,
            LabError::Missing(_) => 4,
            LabError::Core(e) => match e {
                CoreError::Divergence { .. } => 3,
                CoreError::Domain { .. }
                | CoreError::Config(_)
                | CoreError::Context { .. }
                | CoreError::InvalidToken { .. }
                | CoreError::Regime(_)
                | CoreError::ResourceLimit { .. } => 2,
                _ => 1,
            },
            LabError::Io { .. } | LabError::Format { .. } | LabError::EmptyFigure(_) => 1,
        }
    }
}

pub type LabResult<T> = Result<T, LabError>;
