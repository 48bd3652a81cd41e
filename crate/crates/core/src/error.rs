use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed header at byte {offset}: {reason}")]
    Header { offset: u64, reason: String },

    #[error("truncated file at byte {offset} (record {record})")]
    Truncated { offset: u64, record: usize },

    #[error("dimension mismatch in {path}: expected {expected}, found {found}")]
    Dimension {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value at byte {offset} (record {record})")]
    NonFinite { offset: u64, record: usize },

    #[error("duplicate frame id {frame_id} in condition {condition_id}")]
    DuplicateFrame { condition_id: u32, frame_id: u32 },

    #[error("unknown condition {0}")]
    UnknownCondition(u32),

    #[error("no valid triplet after {attempts} attempts")]
    SamplingExhausted { attempts: usize },

    #[error("training diverged at step {step}: loss {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error("no feasible sequence line: {0}")]
    NoMatch(String),

    #[error("missing trained parameters: {0}")]
    MissingParams(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short stable tag used in machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::Empty(_) => "empty",
            Error::Config(_) => "config",
            Error::Header { .. } => "header",
            Error::Truncated { .. } => "truncated",
            Error::Dimension { .. } => "dimension",
            Error::NonFinite { .. } => "non_finite",
            Error::DuplicateFrame { .. } => "duplicate_frame",
            Error::UnknownCondition(_) => "unknown_condition",
            Error::SamplingExhausted { .. } => "sampling_exhausted",
            Error::Diverged { .. } => "diverged",
            Error::NoMatch(_) => "no_match",
            Error::MissingParams(_) => "missing_params",
            Error::Io { .. } => "io",
            Error::Json { .. } => "json",
            Error::Csv(_) => "csv",
        }
    }
}

pub(crate) fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::Shape {
            context,
            expected,
            actual,
        })
    }
}
