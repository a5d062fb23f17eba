use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: {reason}")]
    InvalidArgument { op: &'static str, reason: String },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("no recognizable attribute phrase in caption {0:?}")]
    CaptionParse(String),

    #[error("unknown attribute {name:?}; valid names: {valid}")]
    UnknownAttribute { name: String, valid: String },

    #[error("invalid attribute vector: {0}")]
    AttributeConflict(String),

    #[error("latent space mismatch: expected {expected}, got {found}")]
    LatentSpace {
        expected: &'static str,
        found: &'static str,
    },

    #[error("unknown layer {name:?}; valid names: {valid}")]
    UnknownLayer { name: String, valid: String },

    #[error("{path}:{line}: expected {expected} values, found {found}")]
    Dimension {
        path: String,
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("duplicate id {0:?}")]
    DuplicateId(String),

    #[error("{path}: {reason}")]
    Format { path: String, reason: String },

    #[error("{0}")]
    Config(String),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    Asymmetric(f64),

    #[error("matrix is indefinite (eigenvalue {0:e})")]
    Indefinite(f64),

    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse grouping used by the command line to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Data,
    Numeric,
}

impl Error {
    pub fn invalid(op: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            op,
            reason: reason.into(),
        }
    }

    pub fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl AsRef<std::path::Path>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.as_ref().display().to_string(),
            reason: reason.into(),
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Asymmetric(_) | Error::Indefinite(_) | Error::NonFiniteLoss { .. } => {
                ErrorClass::Numeric
            }
            _ => ErrorClass::Data,
        }
    }
}
