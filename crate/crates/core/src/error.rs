use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("validation failed{}: {msg}", line_suffix(*.line))]
    Validation { line: Option<usize>, msg: String },

    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("degenerate depth for joint {joint}: z + s = {depth} is not in front of the camera")]
    DegenerateDepth { example: usize, joint: usize, depth: f64 },

    #[error("alignment failed: {0}")]
    AlignmentFailure(String),

    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    #[error("camera forward axis is vertical, heading is undefined")]
    UndefinedHeading,

    #[error("root joint {0} is not visible, cannot center")]
    InvisibleRoot(usize),

    #[error("depth normalization needs at least one annotated pair")]
    EmptyPairSet,

    #[error("relative label {0} is not one of -1, 0, +1")]
    InvalidRelation(i64),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("unit bone of example {example} has degenerate predicted length {length}")]
    DegenerateUnitBone { example: usize, length: f64 },

    #[error("missing input: {0}")]
    MissingInput(String),

    #[error("non-finite gradient in tensor {tensor}")]
    NonFiniteGradient { tensor: usize },

    #[error("forward cache does not match the batch: {0}")]
    CacheMismatch(String),

    #[error("requested {requested} pairs but only {available} exist")]
    TooManyPairs { requested: usize, available: usize },

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("training diverged at epoch {epoch}, step {step}: {reason}{}", last_good_suffix(.last_good))]
    Diverged { epoch: usize, step: usize, reason: String, last_good: Option<std::path::PathBuf> },

    #[error("unsupported checkpoint version {0}")]
    CheckpointVersion(u32),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn line_suffix(line: Option<usize>) -> String {
    line.map(|l| format!(" on line {l}")).unwrap_or_default()
}

fn last_good_suffix(path: &Option<std::path::PathBuf>) -> String {
    path.as_ref().map(|p| format!(" (last good checkpoint: {})", p.display())).unwrap_or_default()
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation { line: None, msg: msg.into() }
    }

    pub(crate) fn at_line(self, line: usize) -> Self {
        match self {
            Error::Validation { msg, .. } => Error::Validation { line: Some(line), msg },
            other => other,
        }
    }
}
