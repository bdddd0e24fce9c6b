use std::path::PathBuf;

use kinesics_nn::NnError;

#[derive(Debug, thiserror::Error)]
pub enum CoreError {
    #[error("invalid sample name '{name}': bad {field} ({reason})")]
    SampleName { name: String, field: &'static str, reason: String },

    #[error("{path}: row {row}: {reason}")]
    CsvFormat { path: PathBuf, row: usize, reason: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("label {0} is outside the 12 DUET activities")]
    LabelOutOfRange(usize),

    #[error("graph error: {0}")]
    Graph(String),

    #[error("shape mismatch on {axis}: expected {expected}, got {actual}")]
    Shape { axis: &'static str, expected: usize, actual: usize },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("cannot load {path} (format {format}): {reason}")]
    Load { path: PathBuf, format: &'static str, reason: String },

    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("frozen backbone contract violated: checksum {before} became {after}")]
    FrozenViolation { before: String, after: String },

    #[error("sample {sample}: {source}")]
    Sample { sample: String, #[source] source: Box<CoreError> },

    #[error("{stage} stage failed: {source}")]
    Stage { stage: &'static str, #[source] source: Box<CoreError> },

    #[error("metric error: {0}")]
    Metric(String),

    #[error(transparent)]
    Nn(#[from] NnError),

    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, #[source] source: std::io::Error },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CoreError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CoreError::Io { path: path.into(), source }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        CoreError::Stage { stage, source: Box::new(self) }
    }
}

pub type Result<T, E = CoreError> = std::result::Result<T, E>;
