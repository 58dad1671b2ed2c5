use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no readings")]
    NoReadings,

    #[error("empty selection: {0}")]
    EmptySelection(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("negative concentration {value} for {pollutant}")]
    NegativeConcentration { pollutant: String, value: f64 },

    #[error("no breakpoint bands for pollutant {0}")]
    UnknownPollutant(String),

    #[error("invalid breakpoint table: {0}")]
    InvalidTable(String),

    #[error("panel too short: {have} hours, need at least {need}")]
    PanelTooShort { have: usize, need: usize },

    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Diverged {
        epoch: usize,
        batch: usize,
        loss: f64,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("unsupported file format: {0}")]
    Format(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }
}
