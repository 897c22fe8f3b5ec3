use thiserror::Error;

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("{op}: non-finite value: {detail}")]
    Numeric { op: &'static str, detail: String },
    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("{0}")]
    Argument(String),
}

pub type Result<T> = std::result::Result<T, AutodiffError>;

pub(crate) fn shape_err<T>(op: &'static str, detail: impl Into<String>) -> Result<T> {
    Err(AutodiffError::Shape {
        op,
        detail: detail.into(),
    })
}
