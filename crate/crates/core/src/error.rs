use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the testbed.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("dataset is empty (no users)")]
    EmptyDataset,

    #[error("feedback distribution undefined for item {item}: no interactions and zero smoothing")]
    UndefinedDistribution { item: u32 },

    #[error("index out of range: {what} {index} >= {len}")]
    Index {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("matrix factorization diverged during pass {pass}")]
    TrainingDiverged { pass: usize },

    #[error("ridge system is singular")]
    SingularSystem,

    #[error("non-finite gradient in layer `{layer}`; update rejected")]
    UpdateRejected { layer: String },

    #[error("Q-learning diverged: non-finite loss {loss}")]
    Diverged { loss: f64 },

    #[error("no unshown action available")]
    NoAction,

    #[error("user {user} has {hidden} hidden interactions; at least 2 are required")]
    SkipUser { user: u32, hidden: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("training episode {episode}: {source}")]
    InEpisode {
        episode: usize,
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
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
