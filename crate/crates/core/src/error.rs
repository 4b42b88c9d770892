use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("lexicon line {line}: {message}")]
    LexiconParse { line: usize, message: String },

    #[error("singular design: no observations for cells {missing:?}")]
    SingularDesign { missing: Vec<String> },

    #[error("degenerate response: outcome is constant")]
    DegenerateResponse,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("report error: {0}")]
    Report(String),

    #[error("no results: {0}")]
    EmptyResult(String),

    #[error("backend error: {0}")]
    Backend(#[from] crate::session::BackendError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

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
}

pub(crate) fn read_to_string(path: &std::path::Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}
