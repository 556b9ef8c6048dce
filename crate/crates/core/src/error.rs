use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("replay buffer not ready: {have} transitions, need {need}")]
    NotReady { have: usize, need: usize },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Env(#[from] miniurban::EnvError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Broad class used for process exit codes.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::Checkpoint(_) => ErrorKind::Config,
            Error::Env(
                miniurban::EnvError::Config(_)
                | miniurban::EnvError::MapParse { .. }
                | miniurban::EnvError::InvalidMap(_),
            ) => ErrorKind::Config,
            Error::Shape(_) | Error::Data(_) | Error::Json(_) => ErrorKind::Data,
            Error::NotReady { .. } | Error::Env(_) | Error::Io(_) => ErrorKind::Runtime,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Runtime,
}

pub type Result<T> = std::result::Result<T, Error>;
