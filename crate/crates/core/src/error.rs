use thiserror::Error;

/// Errors produced by the simulation engine.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Caller broke a dimensional or layout contract.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Configuration could not be parsed or failed validation.
    #[error("{0}")]
    Config(#[from] ConfigError),

    /// A YOLO label file could not be parsed.
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    /// A client that must train owns no examples.
    #[error("client {0} has no training data")]
    EmptyClient(usize),

    /// Invalid input to a data or partitioning routine.
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// A configuration problem, anchored to the line that set the offending key
/// when the key came from a file.
#[derive(Debug, Clone, PartialEq, Error)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub key: Option<String>,
    pub message: String,
}

impl ConfigError {
    pub fn new(message: impl Into<String>) -> Self {
        Self {
            line: None,
            key: None,
            message: message.into(),
        }
    }

    pub fn at(line: Option<usize>, key: &str, message: impl Into<String>) -> Self {
        Self {
            line,
            key: Some(key.to_string()),
            message: message.into(),
        }
    }
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match (self.line, &self.key) {
            (Some(line), Some(key)) => write!(f, "line {line}: `{key}`: {}", self.message),
            (Some(line), None) => write!(f, "line {line}: {}", self.message),
            (None, Some(key)) => write!(f, "`{key}`: {}", self.message),
            (None, None) => f.write_str(&self.message),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
