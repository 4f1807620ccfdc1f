use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    /// Malformed header; `field` names the offending entry.
    #[error("format error in `{field}`: {reason}")]
    Format { field: String, reason: String },

    #[error("truncated payload: expected {expected} values, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("statistics error: {0}")]
    Statistics(String),

    #[error("conditioning error: {0}")]
    Conditioning(String),

    #[error("compatibility error: {0}")]
    Compatibility(String),

    #[error("registration failed to converge (ssd trace: {trace:?})")]
    Convergence { trace: Vec<f64> },

    #[error("training error: {0}")]
    Training(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("unknown id `{0}`")]
    UnknownId(String),

    #[error("missing artifact {path}: run `quadseg {producer}` first")]
    MissingArtifact { path: PathBuf, producer: String },
}

impl Error {
    pub(crate) fn format(field: &str, reason: impl Into<String>) -> Self {
        Error::Format {
            field: field.to_string(),
            reason: reason.into(),
        }
    }
}
