use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid geometry in {op}: {detail}")]
    Geometry { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("non-finite {what} at epoch {epoch}, iteration {iteration}")]
    NonFiniteLoss {
        what: &'static str,
        epoch: usize,
        iteration: usize,
    },

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error("input must be {expected}x{expected} (got {got_h}x{got_w}); run preprocessing first")]
    NotPreprocessed {
        expected: usize,
        got_h: usize,
        got_w: usize,
    },

    #[error("no tumor region in mask")]
    EmptyMask,

    #[error("mask is not binary (found value {0})")]
    NonBinaryMask(f64),

    #[error("{0}")]
    Data(String),

    #[error("missing mask for image stem(s): {0:?}")]
    MissingMask(Vec<String>),

    #[error("file stems differ between directories: only in first {only_first:?}, only in second {only_second:?}")]
    StemMismatch {
        only_first: Vec<String>,
        only_second: Vec<String>,
    },

    #[error("I/O error at {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot decode image {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("bad checkpoint magic")]
    BadMagic,

    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),

    #[error("truncated checkpoint: {0}")]
    Truncated(String),

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Coarse failure class, used to choose a process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numeric,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::NonFiniteGradient(_) | Error::NonFiniteLoss { .. } => ErrorClass::Numeric,
            Error::Config { .. } | Error::InvalidArgument(_) => ErrorClass::Usage,
            _ => ErrorClass::Data,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
