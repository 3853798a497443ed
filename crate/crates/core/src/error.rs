use thiserror::Error;

use crate::estimation::RateFit;

pub type Result<T, E = ReadoutError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum ReadoutError {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("record covers {horizon:e} s but the protocol needs {tau_max:e} s")]
    InsufficientData { horizon: f64, tau_max: f64 },

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("fit did not converge after {iterations} iterations (cost {cost:e})")]
    FitFailure {
        iterations: usize,
        cost: f64,
        best: Box<RateFit>,
    },
}

impl ReadoutError {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Self::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

/// Rejects NaN and negative values.
pub(crate) fn ensure_non_negative(name: &'static str, value: f64) -> Result<()> {
    if value.is_nan() || value < 0.0 {
        return Err(ReadoutError::invalid(
            name,
            format!("must be >= 0, got {value}"),
        ));
    }
    Ok(())
}

pub(crate) fn ensure_positive(name: &'static str, value: f64) -> Result<()> {
    if value.is_nan() || value <= 0.0 {
        return Err(ReadoutError::invalid(
            name,
            format!("must be > 0, got {value}"),
        ));
    }
    Ok(())
}
