use std::path::PathBuf;

use plfm_nn::archive::ArchiveError;

pub type Result<T, E = PlfmError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum PlfmError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("unknown range tag {0:?}")]
    UnknownRange(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("incompatible models: {0}")]
    Incompatible(String),
    #[error("empty dataset: {0}")]
    EmptyDataset(String),
    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Archive(#[from] ArchiveError),
}

impl PlfmError {
    /// Whether the error reports models or checkpoints that do not fit
    /// together, as opposed to bad data or arguments.
    pub fn is_incompatibility(&self) -> bool {
        matches!(
            self,
            PlfmError::Incompatible(_) | PlfmError::Archive(ArchiveError::Mismatch { .. })
        )
    }

    /// Whether the error stems from a bad argument rather than bad data.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            PlfmError::InvalidArgument(_) | PlfmError::UnknownRange(_)
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> PlfmError {
        let path = path.into();
        move |source| PlfmError::Io { path, source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> PlfmError {
        PlfmError::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> PlfmError {
    PlfmError::InvalidArgument(msg.into())
}

pub(crate) fn shape(msg: impl Into<String>) -> PlfmError {
    PlfmError::Shape(msg.into())
}
