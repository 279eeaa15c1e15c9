use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("unknown node `{0}`")]
    UnknownNode(String),

    #[error("duplicate node name `{0}`")]
    DuplicateNode(String),

    #[error("graph wiring contains a cycle through: {0:?}")]
    Cycle(Vec<String>),

    #[error("missing graph input `{0}`")]
    MissingInput(String),

    #[error("checkpoint checksum mismatch: {0}")]
    ChecksumMismatch(String),

    #[error("malformed checkpoint: {0}")]
    MalformedCheckpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TensorError>;

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        detail: detail.into(),
    }
}
