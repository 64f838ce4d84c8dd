use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = BpreError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum BpreError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid offspring law: {0}")]
    InvalidLaw(String),

    #[error("invalid environment model: {0}")]
    InvalidModel(String),

    /// A sampled population exceeded the exact-integer capacity.
    #[error("population count overflow: result exceeds {capacity}")]
    Overflow { capacity: u64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("no convergence after {iterations} iterations: {context}")]
    Convergence { iterations: usize, context: String },

    #[error("config parse error at line {line}, column {column}: {message}")]
    ConfigParse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("model rejected: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error("{context}: {source}")]
    Experiment {
        context: String,
        #[source]
        source: Box<BpreError>,
    },

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl BpreError {
    /// True for errors caused by the user's config rather than the computation.
    pub fn is_config_error(&self) -> bool {
        match self {
            BpreError::ConfigParse { .. } | BpreError::Config(_) | BpreError::Validation(_) => true,
            BpreError::InvalidLaw(_) | BpreError::InvalidModel(_) => true,
            BpreError::Experiment { source, .. } => source.is_config_error(),
            _ => false,
        }
    }

    pub(crate) fn context(self, context: impl Into<String>) -> BpreError {
        BpreError::Experiment {
            context: context.into(),
            source: Box::new(self),
        }
    }
}
