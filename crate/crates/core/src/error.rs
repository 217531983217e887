use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not line up.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A caller violated an operation precondition (empty batch, non-scalar loss, ...).
    #[error("contract error: {0}")]
    Contract(String),

    /// Malformed or invalid data records.
    #[error("data error{}: {message}", row.map(|r| format!(" at row {r}")).unwrap_or_default())]
    Data { row: Option<usize>, message: String },

    /// Invalid configuration value.
    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    /// Network layout that cannot be composed.
    #[error("spec error at layer {layer}: {message}")]
    Spec { layer: usize, message: String },

    /// A metric that is undefined for the given labels.
    #[error("metric error: {0}")]
    Metric(String),

    /// A training run failed inside a cross-validation fold.
    #[error("{algorithm} failed in fold {fold}: {message}")]
    Training {
        algorithm: String,
        fold: usize,
        message: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn data(row: impl Into<Option<usize>>, message: impl Into<String>) -> Self {
        Error::Data {
            row: row.into(),
            message: message.into(),
        }
    }

    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 for config/validation failures, 1 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::Data { .. } | Error::Json(_) => 2,
            _ => 1,
        }
    }
}
