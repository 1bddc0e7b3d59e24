use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("softmax over an empty vector")]
    EmptySoftmax,

    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("function under gradient check is not deterministic ({first} then {second})")]
    NonDeterministic { first: f64, second: f64 },

    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("labels not in ontology: {}", .0.join(", "))]
    UnknownLabels(Vec<String>),

    #[error("{0}: no dialogues found")]
    EmptyCorpus(PathBuf),

    #[error("dialogue {dialogue} turn {turn}: no ASR hypotheses available")]
    MissingAsr { dialogue: String, turn: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error("{0}")]
    InvalidInput(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the caller's inputs (bad paths, files,
    /// configuration) rather than a failure while running.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::Parse { .. }
                | Error::UnknownLabels(_)
                | Error::EmptyCorpus(_)
                | Error::MissingAsr { .. }
                | Error::Config(_)
                | Error::InvalidInput(_)
        )
    }
}
