use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("matrix is not positive definite: non-positive pivot at index {pivot}")]
    Singular { pivot: usize },

    #[error("normal equations are singular (pivot {pivot}); use a ridge coefficient lambda > 0")]
    SingularProjection { pivot: usize },

    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown class id {0}")]
    UnknownClass(usize),

    #[error("label {label} is outside the rule set of {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("prototype undefined: class {0} has no samples")]
    EmptyClass(usize),

    #[error("metric undefined: class {0} has no test samples")]
    MetricUndefined(usize),

    #[error("invalid data: {0}")]
    Invalid(String),

    #[error("inconsistent inputs: {0}")]
    Consistency(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("refusing to overwrite {0} (pass --force)")]
    Exists(PathBuf),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Broad failure class, used by the command-line front-end for exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::Parameter(_) => ErrorKind::Config,
            Error::Singular { .. } | Error::SingularProjection { .. } | Error::Diverged { .. } => ErrorKind::Numeric,
            _ => ErrorKind::Data,
        }
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
