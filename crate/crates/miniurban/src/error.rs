use thiserror::Error;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("map parse error at line {line}: {message}")]
    MapParse { line: usize, message: String },
    #[error("invalid map: {0}")]
    InvalidMap(String),
    #[error("planning error: {0}")]
    Planning(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, EnvError>;
