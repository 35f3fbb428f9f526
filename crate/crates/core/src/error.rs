use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("decode error: {0}")]
    Decode(String),

    #[error("stitch error: {0}")]
    Stitch(String),

    #[error("handshake error: {0}")]
    Handshake(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    /// Transport failure, tagged with the frame being exchanged when known.
    #[error("transport error{}: {message}", frame.map(|f| format!(" at frame {f}")).unwrap_or_default())]
    Transport { frame: Option<u32>, message: String },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("schema error in `{field}`: {message}")]
    Schema { field: String, message: String },

    #[error("judge unavailable: {0}")]
    JudgeUnavailable(String),

    #[error("judge reply could not be parsed: {0}")]
    JudgeParse(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error("wav: {0}")]
    Wav(#[from] hound::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("toml: {0}")]
    TomlDe(#[from] toml::de::Error),

    #[error("toml: {0}")]
    TomlSer(#[from] toml::ser::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn schema(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Schema {
            field: field.into(),
            message: message.into(),
        }
    }
}
