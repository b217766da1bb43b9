use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {}", path.display())]
    MissingFile { path: PathBuf },

    #[error("malformed raster {}: {reason}", path.display())]
    MalformedRaster { path: PathBuf, reason: String },

    #[error("i/o failure on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        expected: (u32, u32),
        found: (u32, u32),
    },

    #[error("intensity {0} outside [0, 1]")]
    IntensityOutOfRange(f64),

    #[error("invalid buffer: {0}")]
    InvalidBuffer(String),

    #[error("malformed manifest: {0}")]
    MalformedManifest(String),

    #[error("split `{0}` contains no images")]
    EmptySplit(String),

    #[error("class id {0} is not in the class table")]
    UnknownClass(u8),

    #[error("no class has a defined IoU")]
    NoDefinedClasses,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("external predictor exited with {status}: {stderr}")]
    ExternalCommandFailed { status: String, stderr: String },

    #[error("external predictor exceeded its {0} s timeout")]
    ExternalTimeout(u64),

    #[error("missing predictions for: {}", ids.join(", "))]
    MissingPrediction { ids: Vec<String> },

    #[error("{transform} class {class_id} intensity {intensity} replicate {replicate}{}: {source}",
        image_id.as_ref().map(|id| format!(" image {id}")).unwrap_or_default())]
    Cell {
        transform: String,
        class_id: u8,
        intensity: f64,
        replicate: u32,
        image_id: Option<String>,
        #[source]
        source: Box<Error>,
    },

    #[error("csv: {0}")]
    Csv(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of an external predictor process or its outputs.
    pub fn is_predictor_failure(&self) -> bool {
        match self {
            Error::ExternalCommandFailed { .. }
            | Error::ExternalTimeout(_)
            | Error::MissingPrediction { .. } => true,
            Error::Cell { source, .. } => source.is_predictor_failure(),
            _ => false,
        }
    }
}
