use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parameter `{name}` out of domain: {reason}")]
    Parameter { name: &'static str, reason: String },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("explosive growth at step {step}: max-norm {max_norm:e}")]
    Blowup { step: usize, max_norm: f64 },

    #[error("precondition of {lemma} violated: {detail}")]
    Precondition { lemma: &'static str, detail: String },

    #[error("dimension mismatch: expected {expected}, got {found}")]
    Dimension { expected: String, found: String },

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("malformed data: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::Parameter {
            name,
            reason: reason.into(),
        }
    }
}
