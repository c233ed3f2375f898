use std::path::PathBuf;

/// Unified error type for the engine.
///
/// Transport errors are kept distinct from capability and configuration
/// errors because callers react differently: transport failures are retried
/// and then recorded per item (the run continues), capability failures abort
/// at startup, and configuration failures map to exit code 2.
#[derive(Debug, thiserror::Error)]
pub enum VrError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("transport error: {0}")]
    Transport(String),

    #[error("endpoint returned status {status}: {body}")]
    Endpoint { status: u16, body: String },

    #[error("endpoint capability missing: {0}")]
    Capability(String),

    #[error("missing embeddings for {count} problem(s): {ids:?}")]
    MissingEmbeddings { count: usize, ids: Vec<String> },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("template error: {0}")]
    Template(String),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("malformed record at {path}:{line}: {message}")]
    MalformedRecord {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl VrError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        VrError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures worth retrying at the HTTP layer.
    pub fn is_retryable(&self) -> bool {
        match self {
            VrError::Transport(_) => true,
            VrError::Endpoint { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, VrError>;
