use std::path::PathBuf;

/// Errors produced anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },

    #[error("subject {subject}: feature dimension {found} does not match cohort dimension {expected}")]
    DimensionMismatch {
        subject: String,
        expected: usize,
        found: usize,
    },

    #[error("subject {subject}, row {row}: unknown label {label:?}")]
    UnknownLabel {
        subject: String,
        row: usize,
        label: String,
    },

    #[error("subject {subject}, row {row}: non-finite feature value")]
    NonFinite { subject: String, row: usize },

    #[error("subject {subject}: {message}")]
    Subject { subject: String, message: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("class {class} has {count} samples, at least {required} required")]
    ClassTooSmall {
        class: usize,
        count: usize,
        required: usize,
    },

    #[error("training labels contain a single class")]
    SingleClass,

    #[error("expected {expected} feature columns, got {found}")]
    ShapeMismatch { expected: usize, found: usize },

    #[error("operation not supported for {family} models: {operation}")]
    UnsupportedFamily {
        family: &'static str,
        operation: &'static str,
    },

    #[error("non-finite {what} at iteration {iteration}")]
    Diverged { what: &'static str, iteration: usize },

    #[error("model blob: {0}")]
    Decode(String),

    #[error("unknown {kind} {name:?}")]
    Unknown { kind: &'static str, name: String },

    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
