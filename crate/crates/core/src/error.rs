//! Crate-wide error type.

use std::path::PathBuf;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes, dims or strides that cannot be combined.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A parameter outside its documented range.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// Input data that cannot support the requested operation
    /// (e.g. fewer distinct values than clusters).
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// Empty or otherwise unusable input collection.
    #[error("input error: {0}")]
    Input(String),

    /// A voxel left uncovered when stitching patches.
    #[error("coverage error: voxel ({0}, {1}, {2}) not covered by any patch")]
    Coverage(usize, usize, usize),

    /// Metric whose denominator set is empty.
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// Backprop invoked without a matching train-mode cache.
    #[error("state error: {0}")]
    State(String),

    /// Non-finite values where finite arithmetic is required.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Phantom specification that cannot be realized.
    #[error("phantom spec error: {0}")]
    PhantomSpec(String),

    /// Pipeline configuration problems (bad method, missing model, ...).
    #[error("config error: {0}")]
    Config(String),

    #[error("missing file: {0}")]
    MissingFile(PathBuf),

    #[error("header parse error in {path}: {reason}")]
    HeaderParse { path: PathBuf, reason: String },

    #[error("payload length mismatch in {path}: expected {expected} bytes, found {found}")]
    LengthMismatch {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("unsupported dtype {found:?} in {path} (expected {expected:?})")]
    UnsupportedDtype {
        path: PathBuf,
        expected: &'static str,
        found: String,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }
}
