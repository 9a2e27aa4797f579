use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum NetError {
    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
    #[error(transparent)]
    Data(#[from] depthbins::Error),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("checkpoint {}: {reason}", path.display())]
    Checkpoint { path: PathBuf, reason: String },
    #[error("non-finite loss at epoch {epoch}, step {step}: {detail}")]
    NonFinite { epoch: usize, step: usize, detail: String },
    #[error("input is {actual:?}, model expects {expected:?}")]
    InputSize { expected: (usize, usize), actual: (usize, usize) },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("config parse error: {0}")]
    TomlDe(#[from] toml::de::Error),
    #[error("config write error: {0}")]
    TomlSer(#[from] toml::ser::Error),
}

pub type Result<T> = std::result::Result<T, NetError>;

pub(crate) fn config(msg: impl Into<String>) -> NetError {
    NetError::Config(msg.into())
}
