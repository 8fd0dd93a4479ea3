use thiserror::Error;

/// Errors raised by the tensor, neuron, engine and training layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("layout-unsupported: {0}")]
    LayoutUnsupported(&'static str),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("channel mismatch: expected {expected}, got {got}")]
    ChannelMismatch { expected: usize, got: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown engine `{0}`")]
    UnknownEngine(String),
    #[error("candidate invalid for layer {layer}: {reason}")]
    CandidateInvalid { layer: usize, reason: String },
    #[error("network has no layers")]
    EmptyNetwork,
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("model format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
