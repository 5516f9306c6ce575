use std::path::PathBuf;

use thiserror::Error;

/// Every fallible operation in the crate reports through this type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("index {index} out of range for axis of length {len} ({context})")]
    IndexOutOfRange {
        index: usize,
        len: usize,
        context: &'static str,
    },

    #[error("index list must be strictly increasing ({context})")]
    UnsortedIndices { context: &'static str },

    #[error("layer `{0}` is fully pruned (zero output channels)")]
    LayerFullyPruned(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("batch norm in train mode needs at least 2 values per channel, got {0}")]
    DegenerateBatch(usize),

    #[error("hard and soft index sets overlap at filter {0}")]
    OverlappingIndices(usize),

    #[error("selection asks for {requested} new weak filters but only {live} are live")]
    OverPruning { requested: usize, live: usize },

    #[error("criterion accumulator is empty (no iterations observed)")]
    EmptyAccumulator,

    #[error("epoch {t} outside schedule range 1..={total}")]
    EpochOutOfRange { t: usize, total: usize },

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("optimizer state for `{param}` has shape {state:?} but parameter has shape {param_shape:?}")]
    StaleOptimizerState {
        param: String,
        state: Vec<usize>,
        param_shape: Vec<usize>,
    },

    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),

    #[error("model graph: {0}")]
    Graph(String),

    #[error("{path}: bad file format at byte {offset}: {msg}")]
    Format {
        path: PathBuf,
        offset: u64,
        msg: String,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("audit failed: {0}")]
    Audit(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short category used by the CLI when mapping failures to exit codes.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Config(_) | Error::InvalidSchedule(_) => "config",
            Error::Format { .. } | Error::Io { .. } | Error::Json(_) => "io",
            Error::Audit(_) => "audit",
            _ => "runtime",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
