use std::path::PathBuf;

use eagle_autodiff::AutodiffError;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, EagleError>;

/// Coarse error families; the CLI maps each to its own exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Leakage,
    Numeric,
    Io,
}

#[derive(Debug, Error)]
pub enum EagleError {
    #[error("schema error: missing required column `{0}`")]
    MissingColumn(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("leakage: `{column}` violates {rule}")]
    Leakage { column: String, rule: String },

    #[error("degenerate graph: {0}")]
    DegenerateGraph(String),

    #[error("graph error: {0}")]
    Graph(String),

    #[error("insufficient data: span of {span} days, need at least {minimum}")]
    InsufficientData { span: usize, minimum: usize },

    #[error("split error: {0}")]
    Split(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("incompatible inputs: {0}")]
    Compatibility(String),

    #[error("calibration error: {0}")]
    Calibration(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("digest mismatch for artifact {artifact}: expected {expected}, found {found}")]
    DigestMismatch {
        artifact: String,
        expected: String,
        found: String,
    },

    #[error(transparent)]
    Autodiff(#[from] AutodiffError),

    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<EagleError>,
    },
}

impl EagleError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        EagleError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn in_stage(self, stage: &str) -> Self {
        EagleError::Stage {
            stage: stage.to_string(),
            source: Box::new(self),
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            EagleError::Leakage { .. } => ErrorClass::Leakage,
            EagleError::Numeric(_) | EagleError::Autodiff(_) | EagleError::UndefinedMetric(_) => ErrorClass::Numeric,
            EagleError::Io { .. } => ErrorClass::Io,
            EagleError::Config(_) => ErrorClass::Usage,
            EagleError::Stage { source, .. } => source.class(),
            _ => ErrorClass::Data,
        }
    }
}
