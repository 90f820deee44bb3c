use alloc::string::String;

/// Errors raised by the core simulation routines.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// A coefficient callback or an updated state produced NaN or ±∞.
    #[error("non-finite {quantity} ({value}) at step {step:?}, particle {particle:?}")]
    NonFinite {
        quantity: &'static str,
        value: f64,
        step: Option<usize>,
        particle: Option<usize>,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("node {node} read before it was finalized (frontier {frontier})")]
    Sequencing { node: isize, frontier: isize },
    #[error("size mismatch: {left} vs {right}")]
    SizeMismatch { left: usize, right: usize },
    #[error("Lévy-area precondition violated: {0}")]
    LevyPrecondition(String),
    #[error("unknown model id `{0}`")]
    UnknownModel(String),
}

impl Error {
    pub(crate) fn non_finite(quantity: &'static str, value: f64) -> Self {
        Error::NonFinite {
            quantity,
            value,
            step: None,
            particle: None,
        }
    }

    /// Attaches step and particle indices to a [`Error::NonFinite`]; other variants pass through.
    pub fn at(self, step: usize, particle: usize) -> Self {
        match self {
            Error::NonFinite {
                quantity, value, ..
            } => Error::NonFinite {
                quantity,
                value,
                step: Some(step),
                particle: Some(particle),
            },
            other => other,
        }
    }

    /// True for numerical aborts (exploding or NaN states), false for setup errors.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonFinite { .. })
    }
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

#[inline]
pub(crate) fn check_finite(quantity: &'static str, value: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::non_finite(quantity, value))
    }
}
