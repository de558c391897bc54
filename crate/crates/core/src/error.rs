use thiserror::Error;

/// Errors raised by protocols, the engine, the oracle and the harness.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's precondition (usually a scheduler bug).
    #[error("contract violation: {0}")]
    ContractViolation(String),

    /// A protocol invariant failed during execution.
    #[error("invariant violation: {0}")]
    InvariantViolation(String),

    #[error("invalid population: n = {n}, at least 2 agents are required")]
    InvalidPopulation { n: u64 },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("state space explosion: {reached} configurations reached (cap {cap})")]
    StateSpaceExplosion { reached: usize, cap: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
