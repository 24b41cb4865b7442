use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),
    #[error("geometry mismatch: {left} vs {right}")]
    GeometryMismatch { left: String, right: String },
    #[error("pose ({x:.3}, {y:.3}) is outside the map")]
    PoseOutOfBounds { x: f64, y: f64 },
    #[error("motion leaves the map at ({x:.3}, {y:.3})")]
    OutOfBounds { x: f64, y: f64 },
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("pixel ({row}, {col}) maps outside the operable area")]
    UnreachablePixel { row: i64, col: i64 },
    #[error("episode already finished")]
    EpisodeFinished,
    #[error("masked distribution has no mass left")]
    DegenerateDistribution,
    #[error("no valid action: every candidate pixel is outside the operable area")]
    NoValidAction,
    #[error("invalid config: {0}")]
    Config(String),
    #[error("config hash mismatch: record {recorded}, current {current}")]
    ConfigMismatch { recorded: String, current: String },
    #[error("replay diverged at step {step}: {what}")]
    Divergence { step: usize, what: String },
    #[error("checksum mismatch for {0}")]
    Checksum(PathBuf),
    #[error("record is not terminal")]
    NonTerminalRecord,
    #[error("unknown policy `{0}`")]
    UnknownPolicy(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("malformed data: {0}")]
    Format(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("{path}: {source}")]
    IoAt {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn io_at(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::IoAt { path, source }
    }
}
