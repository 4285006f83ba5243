use std::path::PathBuf;

/// Errors produced by the core types and config loader.
#[derive(Debug, thiserror::Error)]
pub enum CoreError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("config parse error in {path}: {message}")]
    ConfigParse { path: PathBuf, message: String },

    #[error("invalid config field `{field}`: {message}")]
    InvalidField { field: String, message: String },

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("invalid box set: {0}")]
    InvalidBoxes(String),

    #[error("image codec error: {0}")]
    Codec(String),
}

impl CoreError {
    pub fn field(field: &str, message: impl Into<String>) -> Self {
        CoreError::InvalidField {
            field: field.to_string(),
            message: message.into(),
        }
    }
}
