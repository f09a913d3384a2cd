use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("unsupported derivative order {0} (supported: 0, 1, 2)")]
    UnsupportedOrder(u32),

    #[error("index {index} out of range for {len} particles")]
    Index { index: usize, len: usize },

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("equilibrium solver failed after {iterations} iterations (last residual {residual:e}): {reason}")]
    Solver {
        iterations: usize,
        residual: f64,
        reason: String,
    },

    #[error("series domain violated at k = {k}: Q = {q}")]
    SeriesDomain { k: usize, q: f64 },

    #[error("consistency check failed: {0}")]
    Consistency(String),

    #[error("gap collapse at t = {t:e}: gap {k} = {gap:e} below threshold {threshold:e}")]
    GapCollapse {
        t: f64,
        k: usize,
        gap: f64,
        threshold: f64,
    },

    #[error("step size underflow at t = {t:e} (h = {h:e})")]
    StepUnderflow { t: f64, h: f64 },

    #[error("deviation field left the admissible ball: {0}")]
    BallExit(String),

    #[error("fixed-point iteration is not contracting: {0}")]
    NonContraction(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for numerical failures (as opposed to malformed input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Solver { .. }
                | Error::SeriesDomain { .. }
                | Error::Consistency(_)
                | Error::GapCollapse { .. }
                | Error::StepUnderflow { .. }
                | Error::BallExit(_)
                | Error::NonContraction(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
