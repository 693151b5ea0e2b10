use thiserror::Error;

/// Errors raised by the numerical core and the CLI front-end.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite input for `{name}`: {value}")]
    NonFinite { name: &'static str, value: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("quadrature did not converge: value {value:e}, error estimate {err_estimate:e}")]
    Quadrature { value: f64, err_estimate: f64 },

    #[error("cholesky factorization failed with jitter up to {max_jitter:e}")]
    Cholesky { max_jitter: f64 },

    #[error("kernel hypotheses violated at {} grid pair(s), first at {:?}", .pairs.len(), .pairs.first())]
    KernelHypothesis { pairs: Vec<(f64, f64)> },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures of the numerics (as opposed to bad inputs).
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Quadrature { .. } | Error::Cholesky { .. })
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_finite<T: crate::Real>(name: &'static str, x: T) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite {
            name,
            value: x.to_f64_lossy(),
        })
    }
}
