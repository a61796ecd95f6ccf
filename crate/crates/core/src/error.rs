use alloc::string::String;

/// Errors raised by the simulation and analysis routines.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("axis {axis} out of range for dimension {dim}")]
    AxisOutOfRange { axis: usize, dim: usize },

    #[error("green series diverges in dimension {dim} (recurrent walk)")]
    Divergent { dim: usize },

    #[error("instantaneous-coalescence invariant violated at site {site}")]
    InstantInvariant { site: usize },

    #[error("column sets overlap at column {0}")]
    OverlappingColumns(usize),

    #[error("exact arithmetic budget exceeded: {0}")]
    Budget(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("inconclusive: {0}")]
    Inconclusive(String),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
