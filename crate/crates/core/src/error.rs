use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Crate-wide error type. Variants are grouped by what the caller can do
/// about them: `Data`/`Parse` are input problems, `Config` is a caller
/// mistake, `Diverged` signals an aborted optimization.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("line {line}: malformed record: {message}")]
    Parse { line: usize, message: String },

    #[error("data: {0}")]
    Data(String),

    #[error("unknown category {name:?} ({kind})")]
    UnknownCategory { kind: String, name: String },

    #[error("config: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite loss at step {step}{}", seq_id.as_deref().map(|s| format!(" (sequence {s})")).unwrap_or_default())]
    Diverged { step: u64, seq_id: Option<String> },

    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

impl Error {
    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
