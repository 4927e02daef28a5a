use thiserror::Error;

/// Failures of a CLI run, each mapped to an exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("insufficient hits: {0}")]
    InsufficientHits(String),

    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn config(key: &str, message: impl Into<String>) -> Self {
        Self::Config {
            key: key.to_string(),
            message: message.into(),
        }
    }

    /// Wraps a library error raised while handling the config key `key`.
    pub fn from_core(key: &str, err: volterra_ldp::Error) -> Self {
        use volterra_ldp::Error as E;
        match err {
            E::InsufficientHits { .. } => Self::InsufficientHits(err.to_string()),
            E::Domain(_) | E::InvalidParameter { .. } | E::GridMismatch(_) | E::GridTooLarge { .. } => {
                Self::config(key, err.to_string())
            }
            other => Self::Other(format!("{key}: {other}")),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config { .. } => 2,
            Self::InsufficientHits(_) => 4,
            Self::Other(_) => 1,
        }
    }
}
