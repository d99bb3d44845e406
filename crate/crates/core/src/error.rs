use thiserror::Error;

/// Errors raised anywhere in the pipeline.
///
/// Variants are grouped by the exit code the CLI maps them to: usage
/// problems (1), data or format problems (2) and numerical failures (3).
#[derive(Debug, Error)]
pub enum Error {
    #[error("format error: {0}")]
    Format(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("rank error: expected {expected}, found {found}")]
    Rank { expected: String, found: usize },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("mask error: {0}")]
    Mask(String),
    #[error("degenerate signal: {0}")]
    DegenerateSignal(String),
    #[error("insufficient acquisitions: need {needed} time slices, have {available}")]
    InsufficientAcquisitions { needed: usize, available: usize },
    #[error("degenerate range: {0}")]
    DegenerateRange(String),
    #[error("sampling error: {0}")]
    Sampling(String),
    #[error("undefined distance: {0}")]
    UndefinedDistance(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("incompatible checkpoint: {0}")]
    IncompatibleCheckpoint(String),
    #[error("model kind error: {0}")]
    ModelKind(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Process exit code used by the CLI for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Parameter(_) => 1,
            Error::Numerical(_) | Error::DegenerateSignal(_) => 3,
            _ => 2,
        }
    }
}
