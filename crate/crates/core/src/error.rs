use std::path::PathBuf;

/// Errors raised across the library. Every variant carries enough context to
/// point at the offending input.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed document {origin}: {message}")]
    Malformed { origin: String, message: String },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("size mismatch: {0}")]
    SizeMismatch(String),

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("unsupported version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("checksum mismatch: {0}")]
    ChecksumMismatch(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("zero-norm vector")]
    ZeroNorm,

    #[error("no embedding for concept {0}")]
    MissingEmbedding(usize),

    #[error("unknown concept id {id} (vocabulary has {count})")]
    UnknownConcept { id: usize, count: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Divergence { epoch: usize, batch: usize, loss: f64 },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(expected: impl ToString, got: impl ToString) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}
