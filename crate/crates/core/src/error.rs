//! Crate-wide error type and process exit-code mapping.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),
    #[error("invalid depth: {0}")]
    InvalidDepth(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("contract violation: {0}")]
    ContractViolation(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("unknown key: {0}")]
    Lookup(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("evaluation error: {0}")]
    Eval(String),
    #[error("scene spec error: {0}")]
    Scene(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("non-finite loss at step {step}; per-term losses: {breakdown}")]
    NonFiniteLoss { step: usize, breakdown: String },
    #[error("divergence guard tripped at step {step}: loss {loss} exceeded 10x initial {initial} for {window} consecutive steps")]
    Diverged {
        step: usize,
        loss: f64,
        initial: f64,
        window: usize,
    },
}

impl Error {
    /// Process exit code class: 2 = config, 3 = data, 4 = numeric, 1 = internal.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidParameter(_) | Error::Config(_) | Error::Lookup(_) => 2,
            Error::InvalidMatrix(_)
            | Error::InvalidDepth(_)
            | Error::InvalidInput(_)
            | Error::ShapeMismatch(_)
            | Error::Data(_)
            | Error::Eval(_)
            | Error::Scene(_)
            | Error::Io(_) => 3,
            Error::NonFiniteLoss { .. } | Error::Diverged { .. } => 4,
            Error::ContractViolation(_) => 1,
        }
    }
}
