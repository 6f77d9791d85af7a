use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate record_id {record_id:?} (lines {first_line} and {line})")]
    DuplicateRecord {
        record_id: String,
        first_line: usize,
        line: usize,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("class scheme error: {0}")]
    Scheme(String),

    #[error("triple not covered by class scheme: {label} / {portion} / {crop}")]
    UncoveredTriple {
        label: String,
        portion: String,
        crop: String,
    },

    #[error("unaudited split: training requires a clean leakage audit")]
    UnauditedSplit,

    #[error("split audit found {0} leakage violation(s)")]
    Leakage(usize),

    #[error("class {0:?} has no training samples")]
    EmptyClass(String),

    #[error("backend does not support {0}")]
    Unsupported(&'static str),

    #[error("unknown annotation {0:?}")]
    UnknownAnnotation(String),

    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

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

    /// Wraps an error with the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
