use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("invalid noise: {0}")]
    InvalidNoise(String),

    #[error("degenerate noise: feature {feature} has zero mean absolute output")]
    DegenerateNoise { feature: usize },

    #[error("unsupported prior: {0}")]
    UnsupportedPrior(String),

    #[error("value outside domain: {0}")]
    Domain(String),

    #[error("degenerate live set: {0}")]
    DegenerateLiveSet(String),

    #[error("constrained draw failed after {tries} tries at iteration {iteration} (ln L threshold {threshold})")]
    ConstrainedDrawFailure {
        iteration: usize,
        tries: usize,
        threshold: f64,
    },

    #[error("invalid likelihood value {value} at {theta:?}")]
    InvalidLikelihood { value: f64, theta: Vec<f64> },

    #[error("empty result: {0}")]
    EmptyResult(String),

    #[error("inconsistent state: {0}")]
    Inconsistent(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
