use thiserror::Error;

/// Errors produced by the cascade MDP library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("state index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },

    #[error("jump matrix from state {0} to itself")]
    SelfLoop(usize),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("negative rate {0}")]
    NegativeRate(f64),

    #[error("invalid generator: {0}")]
    GeneratorInvalid(String),

    #[error("invalid probability vector: {0}")]
    InvalidProbability(String),

    #[error("invalid step size {0}")]
    InvalidStep(f64),

    #[error("driver state {0} out of range")]
    BadState(usize),

    #[error("control {index} = {value} outside [{lo}, {hi}]")]
    ControlOutOfBounds { index: usize, value: f64, lo: f64, hi: f64 },

    #[error("model is not admissible: {0}")]
    NonAdmissibleModel(String),

    #[error("value function blew up at t = {0} (step too large?)")]
    StepTooLarge(f64),

    #[error("custom control cost supports at most 2 control dimensions, model has {0}")]
    CustomPsiDimension(usize),

    #[error("time {t} outside [0, {horizon}]")]
    TimeOutOfRange { t: f64, horizon: f64 },

    #[error("precondition not met: {0}")]
    PreconditionNotMet(String),

    #[error("generator is reducible")]
    Reducible,

    #[error("linear solve failed: {0}")]
    SingularSolve(String),

    #[error("grid with {0} points exceeds the 1e8 limit")]
    GridTooLarge(u128),

    #[error("empty input")]
    EmptyInput,

    #[error("control {0} outside the box")]
    BoxViolation(usize),

    #[error("unknown kind: {0}")]
    BadKind(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
