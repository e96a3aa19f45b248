use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Validation(String),

    #[error("approximation fit failed: {0}")]
    Fit(String),

    #[error("concentration too high for rejection sampling (expected acceptance {0:.3e} < 1e-6)")]
    ConcentrationTooHigh(f64),

    #[error("infeasible moments: sample-mean singular value {0} is not below 1")]
    InfeasibleMoments(f64),

    #[error("solver did not converge after {0} iterations")]
    NonConvergence(usize),

    #[error("loss increased from {previous} to {current} at iteration {iteration} with admissible rate {rate}")]
    Divergence { iteration: usize, previous: f64, current: f64, rate: f64 },

    #[error("points do not fit inside an open hemisphere")]
    UnsupportedFieldOfView,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
}
