use std::path::PathBuf;

/// Errors raised by the melding library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("degenerate particle system: every log-weight is -inf or NaN")]
    DegenerateWeights,

    #[error("degenerate particle system at temperature {alpha}: {reason}")]
    DegenerateAtTemperature { alpha: f64, reason: String },

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("index {index} out of range 1..={len} in {context}")]
    IndexOutOfRange {
        context: &'static str,
        index: usize,
        len: usize,
    },

    #[error("NaN encountered while evaluating {0}")]
    NotANumber(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid model: {0}")]
    Model(String),

    #[error("degenerate merge: all auxiliary merge weights are -inf")]
    DegenerateMerge,

    #[error("incomplete ledger: {0}")]
    IncompleteLedger(String),

    #[error("singular matrix: {0}")]
    Singular(&'static str),

    #[error("initialisation failed after {attempts} attempts: {reason}")]
    Initialisation { attempts: usize, reason: String },

    #[error("stage {stage}, node {node}: {source}")]
    Stage {
        stage: usize,
        node: String,
        #[source]
        source: Box<Error>,
    },

    #[error("malformed input {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn model(msg: impl Into<String>) -> Self {
        Error::Model(msg.into())
    }

    pub(crate) fn malformed(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Malformed {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
