use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("non-finite state at t = {t}")]
    NonFiniteState { t: f64 },

    #[error("step size collapsed to {h:e} at t = {t}")]
    StepUnderflow { t: f64, h: f64 },

    #[error("time {t} outside trajectory span [{start}, {end}]")]
    OutOfRange { t: f64, start: f64, end: f64 },

    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("non-finite derivative: {0}")]
    NonFinite(String),

    #[error("non-finite gradient at step {step}")]
    NonFiniteGradient { step: usize },

    #[error("non-finite cost")]
    NonFiniteCost,

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("all singular values discarded (sigma_max = {sigma_max:e})")]
    RankZero { sigma_max: f64 },

    #[error("fundamental matrix numerically singular at t = {t} (condition {condition:e})")]
    SingularU { t: f64, condition: f64 },

    #[error("constraint Gramian ill-conditioned (condition {condition:e})")]
    IllConditionedPsi { condition: f64 },

    #[error("degenerate wind-axes triad")]
    DegenerateTriad,

    #[error("invalid constraint set: {0}")]
    InvalidConstraints(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("optimisation failed at iteration {iteration}: {reason}")]
    Diverged { iteration: usize, reason: String },

    #[error("correction kind does not match the requested application")]
    KindMismatch,
}

impl Error {
    /// Bad input or configuration, as opposed to a numerical failure.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::InvalidGrid(_)
                | Error::InvalidConstraints(_)
                | Error::LengthMismatch { .. }
                | Error::KindMismatch
                | Error::OutOfRange { .. }
        )
    }
}
