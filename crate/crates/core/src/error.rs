use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid size for {what}: {value}")]
    InvalidSize { what: &'static str, value: usize },

    #[error("unsupported geometry: {0}")]
    UnsupportedGeometry(String),

    #[error("unsupported cluster mode: {0}")]
    UnsupportedMode(String),

    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("invalid region: {0}")]
    InvalidRegion(String),

    #[error("estimator exhausted: binned mean {mean} is not positive")]
    EstimatorExhausted { mean: f64 },

    #[error("insufficient data: need at least {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("degenerate design matrix in linear fit")]
    DegenerateFit,

    #[error("system too large: {0}")]
    SizeOverflow(String),

    #[error("eigensolver did not converge: {0}")]
    NoConvergence(String),

    #[error("invalid config at `{field}`: {msg}")]
    InvalidConfig { field: String, msg: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("quadrature node {node} (lambda = {lambda}) failed: {source}")]
    NodeFailed {
        node: usize,
        lambda: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("internal corruption: {0}")]
    Corruption(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            msg: msg.into(),
        }
    }
}
