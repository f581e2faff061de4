use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid phantom spec: {0}")]
    InvalidPhantom(String),

    #[error("invalid volume: {0}")]
    InvalidVolume(String),

    #[error("mesh is not closed: edge ({0}, {1}) is used by {2} triangle(s)")]
    OpenMesh(u32, u32, usize),

    #[error("mesh is inward-oriented (signed volume {0:.3} mm³)")]
    InwardMesh(f64),

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("bisection for {what} did not converge after {steps} steps")]
    NoConvergence { what: String, steps: usize },

    #[error("incomplete procedure: {0} of 12 cores")]
    IncompleteProcedure(usize),

    #[error("event timestamp {got} ms precedes previous event at {last} ms")]
    TimestampRegression { last: u64, got: u64 },

    #[error("{path}:{line}: {msg}")]
    MalformedLog { path: PathBuf, line: usize, msg: String },

    #[error("invalid procedure log: {0}")]
    InvalidLog(String),

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("invalid statistics input: {0}")]
    InvalidStatsInput(String),

    #[error("invalid questionnaire: {0}")]
    InvalidQuestionnaire(String),

    #[error("invalid case bundle: {0}")]
    InvalidCase(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}

pub(crate) fn json_err(path: impl Into<PathBuf>) -> impl FnOnce(serde_json::Error) -> Error {
    let path = path.into();
    move |source| Error::Json { path, source }
}
