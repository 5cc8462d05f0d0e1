use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("empty input to {0}")]
    EmptyInput(&'static str),

    #[error("svd did not converge after {sweeps} sweeps (off-diagonal residual {residual:e})")]
    SvdNoConvergence { sweeps: usize, residual: f64 },

    #[error("invalid model dimensions: {0}")]
    InvalidDimensions(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("corrupt model file: {0}")]
    CorruptModel(String),

    #[error("unknown strategy: {0}")]
    UnknownStrategy(String),

    #[error(
        "brute force over {sequences} sequences needs ~{estimated_flops:.3e} FLOPs, \
         over the budget of {budget} sequences"
    )]
    BudgetExceeded {
        sequences: u128,
        estimated_flops: f64,
        budget: u128,
    },

    #[error("normalisation undefined: {0}")]
    ZeroDenominator(String),

    #[error("training diverged at step {step}: loss {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
