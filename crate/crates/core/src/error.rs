use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid neighborhood spec: {0}")]
    InvalidSpec(String),

    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("missing or invalid metadata: {0}")]
    Metadata(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// Every child of every parent channel fell below the energy threshold.
    #[error("no channel reached energy threshold {threshold} (configuration too aggressive)")]
    EmptyHop { threshold: f64 },

    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),

    #[error("no voxel reached confidence threshold {threshold}")]
    EmptySupervision { threshold: f64 },

    #[error("hop {hop}: {source}")]
    AtHop {
        hop: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("case {id}: {source}")]
    Case {
        id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("unknown file extension: {0}")]
    UnknownExtension(PathBuf),

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("unsupported model format version {0}")]
    UnsupportedVersion(u32),

    #[error("invalid config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub fn at_hop(self, hop: usize) -> Self {
        Error::AtHop {
            hop,
            source: Box::new(self),
        }
    }

    pub fn in_case(self, id: impl Into<String>) -> Self {
        Error::Case {
            id: id.into(),
            source: Box::new(self),
        }
    }

    /// Hop index attached to this error, if any.
    pub fn hop(&self) -> Option<usize> {
        match self {
            Error::AtHop { hop, .. } => Some(*hop),
            Error::Case { source, .. } => source.hop(),
            _ => None,
        }
    }

    /// The innermost error, with hop/case context stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtHop { source, .. } | Error::Case { source, .. } => source.root(),
            other => other,
        }
    }
}
