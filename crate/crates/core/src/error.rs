use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("{0}")]
    InvalidArgument(String),

    #[error("tensor is not attached to a computation graph")]
    NotOnGraph,

    #[error("tensors belong to different computation graphs")]
    GraphMismatch,

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("degenerate ground truth: {0}")]
    DegenerateGroundTruth(String),

    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },

    #[error("unsupported format in {path}: {detail}")]
    Unsupported { path: PathBuf, detail: String },

    #[error("missing sidecar {}", .0.display())]
    MissingSidecar(PathBuf),

    #[error("malformed {what}: {detail}")]
    Malformed { what: String, detail: String },

    #[error("schema violation at {pointer}: {detail}")]
    Schema { pointer: String, detail: String },

    #[error("missing predictions for {} image(s): {}", .ids.len(), .ids.join(", "))]
    MissingPredictions { ids: Vec<String> },

    #[error("incomplete score grid: {0}")]
    IncompleteGrid(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { context: context.into(), source }
    }

    pub(crate) fn malformed(what: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Malformed { what: what.into(), detail: detail.into() }
    }

    /// True for errors caused by the input data rather than by how the
    /// library was called.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::InvalidArgument(_))
    }
}
