use thiserror::Error;

#[derive(Debug, Error)]
pub enum AbError {
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("missing audio files: {}", .0.join(", "))]
    MissingFiles(Vec<String>),
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("unknown trial {0}")]
    UnknownTrial(u32),
    #[error("score {0} is outside -2..=2")]
    ScoreOutOfRange(i64),
    #[error("listener {listener} already voted on trial {trial}")]
    Duplicate { listener: String, trial: u32 },
    #[error("trial {trial}: both stimuli must be played before voting")]
    NotPlayed { trial: u32 },
    #[error("no votes recorded")]
    NoVotes,
    #[error("corrupt session data: {0}")]
    Corrupt(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, AbError>;
