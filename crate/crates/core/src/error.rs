use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Unsupported or malformed WAV header.
    #[error("wav format error: {0}")]
    Format(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    /// Well-formed input whose structure violates an invariant
    /// (overlapping segments, empty intervals, ...).
    #[error("structural error: {0}")]
    Structure(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("failed to launch recognizer `{command}`: {source}")]
    Launch {
        command: String,
        #[source]
        source: std::io::Error,
    },

    #[error("recognizer exited with status {}: {stderr}", code.map_or_else(|| "signal".to_string(), |c| c.to_string()))]
    Recognizer { code: Option<i32>, stderr: String },

    #[error("recognizer timed out after {seconds} s")]
    Timeout { seconds: f64 },

    /// A recognizer failure while transcribing one mutant.
    #[error("mutant {mask}: {source}")]
    Mutant {
        mask: String,
        #[source]
        source: Box<Error>,
    },

    #[error("regression: {0}")]
    Regression(String),

    #[error("test undefined: {0}")]
    UndefinedTest(&'static str),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures originating in the recognizer rather than the inputs.
    pub fn is_recognizer_failure(&self) -> bool {
        match self {
            Error::Launch { .. } | Error::Recognizer { .. } | Error::Timeout { .. } => true,
            Error::Mutant { source, .. } => source.is_recognizer_failure(),
            _ => false,
        }
    }
}
