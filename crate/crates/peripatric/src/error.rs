//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter or configuration value violates its contract.
    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    /// A state vector violates the chain's invariants.
    #[error("invalid state: {0}")]
    InvalidState(String),

    /// An event-driven simulation exceeded its event budget; this signals
    /// runaway rates from misconfigured parameters rather than a bug.
    #[error("event cap exceeded after {events} events")]
    EventCapExceeded { events: u64 },

    /// A numerical kernel could not produce a stable result.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// An individual id was not found in the world or log.
    #[error("unknown individual id {0}")]
    UnknownId(u64),

    /// A distribution with no mass was supplied where one is required.
    #[error("empty distribution")]
    EmptyDistribution,

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
