use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the triage pipeline.
///
/// The variants map onto the CLI exit codes: configuration problems exit
/// with 1, data problems with 2 and everything else with 3.
#[derive(Debug, Error)]
pub enum TriageError {
    #[error("config error: {0}")]
    Config(String),
    #[error("missing file: {}", .0.display())]
    MissingPath(PathBuf),
    #[error("data error: {0}")]
    Data(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("schema mismatch: missing columns [{}], extra columns [{}]", missing.join(", "), extra.join(", "))]
    SchemaMismatch { missing: Vec<String>, extra: Vec<String> },
    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("internal error: {0}")]
    Internal(String),
}

impl TriageError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        TriageError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            TriageError::Config(_) | TriageError::MissingPath(_) => 1,
            TriageError::Data(_) | TriageError::NotFound(_) | TriageError::SchemaMismatch { .. } => 2,
            TriageError::Io { .. } | TriageError::Internal(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, TriageError>;
