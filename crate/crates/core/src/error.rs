use thiserror::Error;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("stream error at byte {offset}: {reason}")]
    Stream { offset: usize, reason: String },
    #[error("framing error: {0}")]
    Framing(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("training diverged at step {step}: {reason}")]
    Diverged { step: u64, reason: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("wav error: {0}")]
    Wav(#[from] hound::Error),
}

pub type Result<T> = std::result::Result<T, CodecError>;

pub(crate) fn config_err(msg: impl Into<String>) -> CodecError {
    CodecError::Config(msg.into())
}

pub(crate) fn input_err(msg: impl Into<String>) -> CodecError {
    CodecError::Input(msg.into())
}
