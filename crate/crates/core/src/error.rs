use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("hierarchy too large: {count} indices exceeds the limit of {limit}")]
    Capacity { count: u128, limit: usize },

    #[error("Markovian limit invalid at this temperature (beta*hbar^2/(2 I_S) = {ratio} >= 1)")]
    MarkovianInvalid { ratio: f64 },

    #[error("step size underflow at t = {t}: h = {h} < h_min = {h_min} (error estimate {err})")]
    StepUnderflow {
        t: f64,
        h: f64,
        h_min: f64,
        err: f64,
    },

    #[error("step budget of {max_steps} exhausted at t = {t}")]
    TooManySteps { t: f64, max_steps: usize },

    #[error("linear solve failed: {reason} (residual {residual:e})")]
    Solver { reason: String, residual: f64 },

    #[error("not equilibrated: last delta {delta:e} above threshold {threshold:e}")]
    NotEquilibrated { delta: f64, threshold: f64 },

    #[error("field not normalized: trace = {trace}")]
    NotNormalized { trace: f64 },

    #[error("config: {0}")]
    Config(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("parse: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
