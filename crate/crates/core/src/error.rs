use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failure while scoring a single sentence.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScoreError {
    #[error("cannot score an empty sentence")]
    EmptySentence,
    #[error("transport error while scoring {sentence:?}: {message}")]
    Transport { sentence: String, message: String },
}

impl ScoreError {
    pub fn transport(sentence: impl Into<String>, message: impl Into<String>) -> Self {
        ScoreError::Transport {
            sentence: sentence.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("{source_name}:{line}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error(transparent)]
    Score(#[from] ScoreError),

    #[error("{} room(s) failed to classify: {}", .0.len(), .0.join(", "))]
    RoomsFailed(Vec<String>),

    #[error("evaluation error: {0}")]
    Eval(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Param(msg.into())
    }

    pub(crate) fn schema(msg: impl Into<String>) -> Self {
        Error::Schema(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
