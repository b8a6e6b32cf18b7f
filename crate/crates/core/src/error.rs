use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no samples")]
    NoSamples,

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("matrix data length {len} does not match shape {rows}x{cols}")]
    ShapeMismatch { rows: usize, cols: usize, len: usize },

    #[error("non-finite value at row {row}, column {col}")]
    NonFiniteEntry { row: usize, col: usize },

    #[error("matrix is not symmetric (entry ({row}, {col}) differs by {diff:e})")]
    NotSymmetric { row: usize, col: usize, diff: f64 },

    #[error("matrix is not positive definite (pivot {pivot})")]
    NotPositiveDefinite { pivot: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("label {label} has no positive partner in the batch")]
    NoPositive { label: usize },

    #[error("training diverged at step {step}: loss is not finite")]
    Diverged { step: usize },

    #[error("eigen identity violated: relative error {error:e} exceeds {tolerance:e}")]
    IdentityViolation { error: f64, tolerance: f64 },

    #[error("{path}: line {line}: expected {expected} values, found {found}")]
    RaggedRow {
        path: PathBuf,
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("{path}: line {line}, column {column}: cannot parse {token:?} as a float")]
    ParseFloat {
        path: PathBuf,
        line: usize,
        column: usize,
        token: String,
    },

    #[error("{path}: line {line}, column {column}: value is NaN or infinite")]
    NonFiniteCsv {
        path: PathBuf,
        line: usize,
        column: usize,
    },

    #[error("{path}: non-finite value at byte offset {offset}")]
    NonFiniteBinary { path: PathBuf, offset: usize },

    #[error("{path}: truncated binary payload at byte offset {offset} (expected {expected} bytes)")]
    Truncated {
        path: PathBuf,
        offset: usize,
        expected: usize,
    },

    #[error("{path}: {extra} unexpected bytes after payload ending at byte offset {offset}")]
    TrailingBytes {
        path: PathBuf,
        offset: usize,
        extra: usize,
    },

    #[error("{path}: bad magic bytes, not an SSDF feature file")]
    BadMagic { path: PathBuf },

    #[error("{path}: unsupported feature file version {version}")]
    UnsupportedVersion { path: PathBuf, version: u8 },

    #[error("schema mismatch: expected {expected:?}, found {found:?}")]
    SchemaMismatch { expected: String, found: String },

    #[error("malformed model document: {0}")]
    Model(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("{path}: {cause}")]
    Io { path: PathBuf, cause: std::io::Error },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            cause: source,
        }
    }
}
