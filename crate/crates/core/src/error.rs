use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A Chebyshev value left the double range while building coefficients.
    #[error("capacity exceeded: T_{index}(omega0) is not finite for s={s}, eta={eta}")]
    Capacity { s: usize, eta: f64, index: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// Non-finite state produced at `stage` of step `step`.
    #[error("divergence at step {step}, stage {stage}")]
    Divergence { step: usize, stage: usize },

    #[error("insufficient data: {usable} usable rows, need at least {needed}")]
    InsufficientData { usable: usize, needed: usize },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
