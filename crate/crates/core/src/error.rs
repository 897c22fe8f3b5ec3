use std::path::PathBuf;

use evssm_autodiff::AutodiffError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("malformed event record {record}: {detail}")]
    Format { record: usize, detail: String },
    #[error("timestamp decreases at record {record}: {prev} -> {t}")]
    Order { record: usize, prev: u64, t: u64 },
    #[error("event record {record} at ({x}, {y}) lies outside a {width}x{height} sensor")]
    Bounds {
        record: usize,
        x: u32,
        y: u32,
        width: u32,
        height: u32,
    },
    #[error("sensor geometry mismatch: {0}")]
    Geometry(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("empty stream: {0}")]
    EmptyStream(String),
    #[error("frame stack needs {needed} slots but pad_to is {pad_to}")]
    Capacity { needed: usize, pad_to: usize },
    #[error("cannot select {k} frames from a stack of {p}")]
    SelectionInfeasible { k: usize, p: usize },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<CoreError>,
    },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl CoreError {
    pub fn context(self, context: impl Into<String>) -> Self {
        CoreError::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, CoreError>;
