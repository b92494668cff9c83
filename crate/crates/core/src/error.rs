//! Shared error type. Numerical faults carry enough context to tell a
//! mis-tuned experiment from a bug.

use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Non-finite or out-of-domain input.
    InvalidInput(String),
    /// A positioned-body guarantee (unit ball inside, body inside the
    /// radius-2(d+1) ball) failed where an operation relied on it.
    PositioningViolation(String),
    /// A body-derived matrix (e.g. the sample covariance) is numerically
    /// singular.
    DegenerateBody(String),
    /// The importance ratio overflowed after exponentiation. Carries log R;
    /// this indicates mis-tuned constants, not recoverable noise.
    RatioOverflow { log_ratio: f64 },
    /// Alternating projection could not produce a feasible point.
    Infeasible(String),
    /// The operation needs a built-in body with an exact Euclidean projection.
    UnsupportedBody(String),
    /// Internal invariant broken; a bug, not bad input.
    Internal(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidInput(msg) => write!(f, "invalid input: {msg}"),
            Error::PositioningViolation(msg) => write!(f, "positioning violation: {msg}"),
            Error::DegenerateBody(msg) => write!(f, "degenerate body: {msg}"),
            Error::RatioOverflow { log_ratio } => {
                write!(f, "density ratio overflow: log R = {log_ratio}")
            }
            Error::Infeasible(msg) => write!(f, "infeasible: {msg}"),
            Error::UnsupportedBody(msg) => write!(f, "unsupported body: {msg}"),
            Error::Internal(msg) => write!(f, "internal error: {msg}"),
        }
    }
}

impl std::error::Error for Error {}
