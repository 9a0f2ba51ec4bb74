use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error(
        "coherent state |alpha|={alpha:.4} loses {loss:.3e} of its norm above n_max={n_max} \
         (tolerance {tolerance:.1e}); try n_max >= {suggested_n_max}"
    )]
    Truncation {
        alpha: f64,
        n_max: usize,
        loss: f64,
        tolerance: f64,
        suggested_n_max: usize,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("operator is not Hermitian (max deviation {deviation:.3e})")]
    NonHermitian { deviation: f64 },

    #[error("invariant breach at step {step} (t={time:.6}): {what} = {value:.3e}")]
    InvariantBreach {
        step: usize,
        time: f64,
        what: &'static str,
        value: f64,
    },

    #[error("state diverged at t={time:.6}: {reason}")]
    Divergence { time: f64, reason: String },

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("photocurrent record: {0}")]
    Photocurrent(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
