use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

/// Errors raised by the numerical routines.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// An argument lies outside the domain of the function.
    Domain(String),
    /// Dimensions of the inputs do not agree.
    Shape(String),
    /// A matrix that must be positive definite is not (or is too badly conditioned).
    NotPositiveDefinite {
        /// Which matrix (block label, component, ...).
        context: String,
        /// The offending eigenvalue or pivot.
        eigenvalue: f64,
    },
    /// A Jacobian does not have full column rank.
    RankDeficient {
        /// Which matrix.
        context: String,
        /// Right singular direction belonging to the (near) zero singular value.
        direction: Vec<f64>,
    },
    /// Inputs are well-formed but violate a documented invariant.
    Validation(String),
    /// An iterative procedure failed to converge.
    Numeric(String),
}

/// Result alias used throughout the crate.
pub type Result<T> = core::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    /// `true` for failures caused by the numerics rather than by the input.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Numeric(_))
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Domain(m) => write!(f, "domain error: {m}"),
            Error::Shape(m) => write!(f, "shape mismatch: {m}"),
            Error::NotPositiveDefinite { context, eigenvalue } => {
                write!(f, "{context} is not positive definite (eigenvalue {eigenvalue:e})")
            }
            Error::RankDeficient { context, direction } => {
                write!(f, "{context} is rank deficient along direction {direction:?}")
            }
            Error::Validation(m) => write!(f, "validation error: {m}"),
            Error::Numeric(m) => write!(f, "numeric failure: {m}"),
        }
    }
}

impl core::error::Error for Error {}
