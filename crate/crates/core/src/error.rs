use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("degenerate class distribution: {0}")]
    DegenerateClass(String),

    #[error("stratification failed: {0}")]
    Stratification(String),

    #[error("unknown city {city:?}; known cities: {}", known.join(", "))]
    UnknownCity { city: String, known: Vec<String> },

    #[error("{}:{line}: {msg}", path.display())]
    Format {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("missing column {column:?}; available columns: {}", available.join(", "))]
    MissingColumn {
        column: String,
        available: Vec<String>,
    },

    #[error("geometry error for tract {geoid}: {msg}")]
    Geometry { geoid: String, msg: String },

    #[error("checkpoint field `{field}`: {msg}")]
    Checkpoint { field: String, msg: String },

    #[error("fusion unavailable: {0}")]
    FusionUnavailable(String),

    #[error("tract {0} has no label")]
    Unlabeled(String),

    #[error("cannot access {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
