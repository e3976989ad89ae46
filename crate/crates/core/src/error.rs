use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the segmentation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("missing referenced files: {}", .0.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", "))]
    MissingFiles(Vec<PathBuf>),

    #[error("duplicate record id `{0}`")]
    DuplicateId(String),

    #[error("invalid record `{id}`: {reason}")]
    InvalidRecord { id: String, reason: String },

    #[error("invalid taxonomy: {0}")]
    InvalidTaxonomy(String),

    #[error("mask value {value} at (row {row}, col {col}) exceeds class count K = {k}")]
    MaskValueOutOfRange {
        row: usize,
        col: usize,
        value: u8,
        k: usize,
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("prediction not normalized at pixel {pixel}: channel sum {sum}")]
    NotNormalized { pixel: usize, sum: f64 },

    #[error("image error: {0}")]
    Image(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("empty image")]
    EmptyImage,

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("experiment directory {0} is locked by another controller")]
    Locked(PathBuf),

    #[error("invalid state: {0}")]
    State(String),

    #[error("review: {0}")]
    Review(#[from] ReviewError),

    #[error("report: {0}")]
    Report(String),

    #[error("serialization error: {0}")]
    Serde(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Wraps `self` with the name of the pipeline stage that raised it.
    pub fn in_stage(self, stage: &str) -> Self {
        match self {
            Error::Stage { .. } => self,
            other => Error::Stage {
                stage: stage.to_string(),
                source: Box::new(other),
            },
        }
    }

    /// Stage name, if the error was raised inside one.
    pub fn stage(&self) -> Option<&str> {
        match self {
            Error::Stage { stage, .. } => Some(stage),
            _ => None,
        }
    }
}

/// Failures specific to the human review service.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ReviewError {
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error("sample `{0}` is not in the session queue")]
    UnknownSample(String),
    #[error("sample `{0}` already decided with a different verdict")]
    Conflict(String),
    #[error("session `{0}` is closed")]
    Closed(String),
    #[error("recursion {0} already has an open session `{1}`")]
    ConcurrentSession(u32, String),
    #[error("no candidate store for recursion {0}")]
    MissingCandidates(u32),
    #[error("review session timed out after {0} s")]
    Timeout(u64),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

/// Attaches a path to `std::io::Result`s.
pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|e| Error::io(path, e))
    }
}
