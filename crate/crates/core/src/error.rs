use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: left is {left:?}, right is {right:?}")]
    Shape { op: &'static str, left: (usize, usize), right: (usize, usize) },

    #[error("degenerate vector in {context}: norm {norm:e} is below 1e-12")]
    DegenerateVector { context: String, norm: f64 },

    #[error("loss node must be 1x1, found {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("classes absent from batch: {0:?}")]
    MissingClasses(Vec<usize>),

    #[error("dataset already carries a {kind} shift at severity {severity}")]
    AlreadyShifted { kind: String, severity: u8 },

    #[error("bad magic in {path}: expected {expected:?}, found {found:?}")]
    BadMagic { path: PathBuf, expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {found} in {path} (this build reads version {supported})")]
    UnsupportedVersion { path: PathBuf, found: u32, supported: u32 },

    #[error("file {path} is truncated or malformed: {detail}")]
    Truncated { path: PathBuf, detail: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
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
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
