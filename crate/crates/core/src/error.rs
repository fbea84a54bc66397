use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("coincident points: free-space channel is singular")]
    CoincidentPoints,
    #[error("domain error: {0}")]
    Domain(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("weight document: {0}")]
    Weights(#[from] WeightsError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Load/validation failures for the portable GNN weight document.
#[derive(Debug, Error, PartialEq)]
pub enum WeightsError {
    #[error("malformed document: {0}")]
    Malformed(String),
    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("unknown activation tag `{0}`")]
    UnknownActivation(String),
    #[error("unknown tensor name `{0}`")]
    UnknownTensor(String),
    #[error("missing tensor `{0}`")]
    MissingTensor(String),
    #[error("inconsistent dimensions: {0}")]
    Dimension(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
