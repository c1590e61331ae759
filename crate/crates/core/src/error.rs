//! Crate-wide error type.

use alloc::string::String;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Malformed or out-of-contract input.
    #[error("invalid input: {0}")]
    InvalidInput(String),
    /// Not enough samples/steps/frequencies to run the requested probe.
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    /// A derivative of higher order than the declared budget was requested.
    #[error("derivative budget exceeded: requested order {requested}, budget {budget}")]
    BudgetExceeded { requested: usize, budget: usize },
    /// An operation requiring ellipticity was attempted on a non-elliptic symbol.
    #[error("ellipticity failure: {0}")]
    Ellipticity(String),
    /// The 2x2 lower-order system is degenerate (root separation failed).
    #[error("degenerate system: {0}")]
    DegenerateSystem(String),
    /// Numerical breakdown (instability, non-finite values).
    #[error("numeric failure: {0}")]
    Numeric(String),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl core::fmt::Display) -> Error {
    Error::InvalidInput(alloc::format!("{msg}"))
}

pub(crate) fn numeric(msg: impl core::fmt::Display) -> Error {
    Error::Numeric(alloc::format!("{msg}"))
}
