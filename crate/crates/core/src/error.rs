use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A model parameter is outside its admissible range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// The virtual queue exceeded its deterministic ceiling. This can only
    /// happen if a policy or update rule is implemented incorrectly.
    #[error("queue ceiling breached at slot {slot}: backlog {backlog} > ceiling {ceiling}")]
    CeilingBreach { slot: u64, backlog: f64, ceiling: f64 },

    /// Cumulative power exceeded `beta * t + Q(t)`.
    #[error("prefix power bound violated at slot {slot}: spent {spent} > bound {bound}")]
    PowerBoundBreach { slot: u64, spent: f64, bound: f64 },

    #[error("problem too large: {0}")]
    TooLarge(String),

    #[error("linear program is infeasible")]
    Infeasible,

    #[error("linear program is unbounded")]
    Unbounded,

    #[error("simplex iteration limit ({0}) reached")]
    IterationLimit(usize),

    /// Post-solve residual check failed.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A policy produced an infeasible slot decision.
    #[error("infeasible decision at slot {slot}: {reason}")]
    InfeasibleDecision { slot: u64, reason: String },

    #[error("degenerate comparison: optimum is zero")]
    DegenerateComparison,
}
