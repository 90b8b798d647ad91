use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("insufficient data: need at least {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("{what} = {value} is outside [{lo}, {hi}]")]
    OutOfRange {
        what: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("SNR is undefined for a zero-power signal")]
    UndefinedSnr,

    #[error("segment carries no signal power")]
    NoSignal,

    #[error("correlation is undefined for a zero-variance signal")]
    UndefinedCorrelation,

    #[error("miss rate is undefined for an empty ground-truth beat list")]
    UndefinedMdr,

    #[error("baseline metric `{0}` is zero")]
    ZeroBaseline(&'static str),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: malformed NPY: {reason}")]
    Npy { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("stage `{stage}` failed on segment {segment}: {source}")]
    Stage {
        stage: &'static str,
        segment: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn at_stage(self, stage: &'static str, segment: impl Into<String>) -> Self {
        Error::Stage {
            stage,
            segment: segment.into(),
            source: Box::new(self),
        }
    }
}
