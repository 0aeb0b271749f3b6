use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("backprop requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("NaN gradient produced at tape node {node} ({op})")]
    NanGradient { node: usize, op: &'static str },

    #[error("non-finite value in activations after block {block}")]
    NanActivation { block: usize },

    #[error("singular matrix in {op}: |det| = {det:.3e}{context}")]
    SingularMatrix {
        op: &'static str,
        det: f64,
        context: String,
    },

    #[error("{0}")]
    InvalidArgument(String),

    #[error("tau {tau} out of range 1..={max}")]
    TauOutOfRange { tau: usize, max: usize },

    #[error("pilot pattern has no pilot resource elements")]
    EmptyPilotSet,

    #[error("bad magic in {path}: expected {expected:?}")]
    BadMagic { path: String, expected: [u8; 4] },

    #[error("unsupported format version {found} in {path} (expected {expected})")]
    BadVersion {
        path: String,
        found: u32,
        expected: u32,
    },

    #[error("{path}: header declares {declared} records but file holds {actual}")]
    RecordCountMismatch {
        path: String,
        declared: u64,
        actual: u64,
    },

    #[error("truncated or corrupt file {path}: {detail}")]
    CorruptFile { path: String, detail: String },

    #[error("non-finite gradient for parameter {name}")]
    NonFiniteGrad { name: String },

    #[error("training diverged at iteration {iteration} (loss not finite); last finite checkpoint: {checkpoint}")]
    Diverged {
        iteration: usize,
        checkpoint: String,
    },

    #[error("checkpoint not found: {0}")]
    MissingCheckpoint(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
