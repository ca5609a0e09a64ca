use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: expected {expected}, got {actual} ({context})")]
    Shape {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("episode already terminated after {0} steps")]
    EpisodeTerminated(usize),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("parse error in {path} at {offset}: {msg}")]
    Parse {
        path: PathBuf,
        offset: String,
        msg: String,
    },

    #[error("incompatible format version in {path}: file has {found}, expected {expected}")]
    Version {
        path: PathBuf,
        found: u32,
        expected: u32,
    },

    #[error("missing checkpoint: {0}")]
    MissingCheckpoint(PathBuf),

    #[error(
        "task generation gave up after {attempts} rollouts with {accepted}/{wanted} tasks accepted"
    )]
    TaskStarvation {
        attempts: usize,
        accepted: usize,
        wanted: usize,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(context: &'static str, expected: usize, actual: usize) -> Self {
        Error::Shape {
            context,
            expected,
            actual,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
