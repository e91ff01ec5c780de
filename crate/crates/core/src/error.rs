use thiserror::Error;

/// Errors raised by grid construction, measure arithmetic, cost tables and solvers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("measures live on different grids")]
    GridMismatch,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("negative or non-finite mass {0}")]
    InvalidMass(f64),
    #[error("negative scale factor {0}")]
    NegativeScale(f64),
    #[error("argument {0} outside the domain of the function")]
    Domain(f64),
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error("candidate grid is empty")]
    EmptyCandidates,
    #[error("tuple {0:?} is infeasible (no candidate at finite cost)")]
    InfeasibleTuple(Vec<usize>),
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid transport problem: {0}")]
    InvalidProblem(String),
    #[error("tensor with {entries} entries exceeds the memory budget of {budget}")]
    MemoryBudget { entries: usize, budget: usize },
    #[error("plan marginal on axis {axis} is not absolutely continuous w.r.t. its target")]
    NotAbsolutelyContinuous { axis: usize },
    #[error("measure csv: {0}")]
    Csv(String),
}

pub type Result<T> = std::result::Result<T, Error>;
