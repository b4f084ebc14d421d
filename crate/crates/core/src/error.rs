use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("candidate list is empty")]
    EmptyCandidateList,

    #[error("non-finite score {score} for document `{doc}`")]
    InvalidScore { doc: String, score: f64 },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dim { expected: usize, actual: usize },

    #[error("invalid query vector: {0}")]
    InvalidQuery(String),

    #[error("invalid argument: {0}")]
    InvalidArg(String),

    #[error("maximum score {0} is not positive; cannot normalize")]
    NonPositiveMax(f64),

    #[error("all candidate scores are equal; standard deviation is zero")]
    DegenerateScores,

    #[error("run for query `{0}` has already been refined")]
    AlreadyRefined(String),

    #[error("no calibration data")]
    NoCalibrationData,

    #[error("transform mismatch: calibrator uses `{expected}`, run uses `{actual}`")]
    TransformMismatch { expected: String, actual: String },

    #[error("no ground-truth label for query `{0}`")]
    MissingGroundTruth(String),

    #[error("query `{0}` is not present in the run")]
    UnknownQuery(String),

    #[error("query `{0}` has no positive-grade relevant document")]
    NoRelevantDoc(String),

    #[error("duplicate entry ({query}, {doc})")]
    DuplicateEntry { query: String, doc: String },

    #[error("{}:{line}: {msg}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("cannot access {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }

    /// True for errors caused by malformed or inconsistent input data, as
    /// opposed to bad arguments or broken internal invariants.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::EmptyCandidateList
                | Error::InvalidScore { .. }
                | Error::Dim { .. }
                | Error::InvalidQuery(_)
                | Error::NonPositiveMax(_)
                | Error::DegenerateScores
                | Error::NoCalibrationData
                | Error::MissingGroundTruth(_)
                | Error::UnknownQuery(_)
                | Error::NoRelevantDoc(_)
                | Error::DuplicateEntry { .. }
                | Error::Parse { .. }
                | Error::Io { .. }
                | Error::Json(_)
        )
    }

    pub fn is_usage_error(&self) -> bool {
        matches!(self, Error::InvalidArg(_))
    }
}
