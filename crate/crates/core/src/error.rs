use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, LabError>;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("lookup error: {0}")]
    Lookup(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    /// The objective became non-finite. `trace` holds the loss values seen so far.
    #[error("optimization diverged after {} iterations: {msg}", trace.len())]
    Optimization { msg: String, trace: Vec<f64> },

    #[error("linear algebra error: {0}")]
    LinearAlgebra(String),

    #[error("mode error: {0}")]
    Mode(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("version mismatch: expected `{expected}`, found `{found}`")]
    Version { expected: String, found: String },

    #[error("ingestion error: {0}")]
    Ingestion(String),

    #[error("serialization error: {0}")]
    Serialization(String),

    #[error("iteration {iteration}: {source}")]
    AtIteration {
        iteration: usize,
        #[source]
        source: Box<LabError>,
    },
}

impl LabError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LabError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn at_iteration(self, iteration: usize) -> Self {
        LabError::AtIteration {
            iteration,
            source: Box::new(self),
        }
    }

    /// Short category name used for CLI diagnostics.
    pub fn category(&self) -> &'static str {
        match self {
            LabError::Config(_) => "config",
            LabError::Lookup(_) => "lookup",
            LabError::Argument(_) => "argument",
            LabError::Optimization { .. } => "optimization",
            LabError::LinearAlgebra(_) => "linalg",
            LabError::Mode(_) => "mode",
            LabError::Io { .. } => "io",
            LabError::Version { .. } => "version",
            LabError::Ingestion(_) => "ingestion",
            LabError::Serialization(_) => "serialization",
            LabError::AtIteration { source, .. } => source.category(),
        }
    }
}

impl From<serde_json::Error> for LabError {
    fn from(e: serde_json::Error) -> Self {
        LabError::Serialization(e.to_string())
    }
}
