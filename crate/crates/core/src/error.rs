use thiserror::Error;

/// Errors raised across the simulation, control and estimation layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("simulation diverged at step {step}: {reason}")]
    Simulation { step: usize, reason: String },

    #[error("estimator produced a non-finite value at stage `{stage}`")]
    Estimator { stage: &'static str },

    #[error("least-squares oracle failed: {0}")]
    Oracle(String),

    #[error("queue guard violated: {0}")]
    QueueGuard(String),

    #[error("comparison refused: {0}")]
    Comparison(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
