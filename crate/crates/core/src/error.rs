use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid difficulty: {0}")]
    InvalidDifficulty(String),
    #[error("unit index {index} out of range 1..={horizon}")]
    UnitIndex { index: usize, horizon: usize },
    #[error("context is terminal; cannot advance past unit {0}")]
    Terminal(usize),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("missing input for {role}: {what}")]
    MissingInput {
        role: &'static str,
        what: &'static str,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("SAC-branch visitation {rate:.4} fell below floor {floor:.4} at step {step}")]
    Visitation { step: usize, rate: f64, floor: f64 },
    #[error("empty batch")]
    EmptyBatch,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit status for the command-line runner.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonFinite(_) | Error::Visitation { .. } => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
