use std::io;
use std::path::PathBuf;

use chrono::NaiveDate;
use thiserror::Error;

use crate::geo::StationId;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    /// A malformed record in an input file. `line` is 1-based.
    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("invalid coordinates ({lat}, {lon})")]
    InvalidCoordinates { lat: f64, lon: f64 },

    #[error("station index is empty")]
    EmptyIndex,

    #[error("duplicate station id {0}")]
    DuplicateStation(StationId),

    #[error("unknown station id {0}")]
    UnknownStation(StationId),

    #[error("duplicate observation for station {station} on {date}")]
    DuplicateObservation { station: StationId, date: NaiveDate },

    #[error("no observation for station {station} on {date}")]
    MissingObservation { station: StationId, date: NaiveDate },

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("vocabulary is empty")]
    EmptyVocabulary,

    #[error("word {0:?} is in both the rain and the no-rain lexicon")]
    LexiconOverlap(String),

    #[error("training data contains only one class")]
    SingleClass,

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("model was trained on a different vocabulary (model {model}, given {given})")]
    VocabularyMismatch { model: String, given: String },

    #[error("user {0:?} has no home truth")]
    MissingTruth(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{0}")]
    Json(#[from] serde_json::Error),

    #[error("{0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: u64, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
