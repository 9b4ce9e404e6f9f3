use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("graph too large for exhaustive enumeration: {links} links exceeds the cap of {cap}")]
    GraphTooLarge { links: usize, cap: usize },

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("length mismatch: expected {expected} entries, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("schedule activates interfering links")]
    InfeasibleSchedule,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("weight function derivative must be positive, got W'({q}) = {derivative}")]
    NonIncreasingWeight { q: f64, derivative: f64 },

    #[error("inadmissible V = {v}: must not exceed W(q_max)/U'(1) = {limit}")]
    InadmissibleV { v: f64, limit: f64 },

    #[error("solver did not converge within {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("degenerate distribution: probability of schedule {index} is zero")]
    DegenerateDistribution { index: usize },

    #[error("empty trace")]
    EmptyTrace,

    #[error("window [{start}, {end}] outside trajectory span [{lo}, {hi}]")]
    WindowOutOfRange { start: f64, end: f64, lo: f64, hi: f64 },

    #[error("empty sweep")]
    EmptySweep,

    #[error("{failed} of {total} sweep runs failed; first: {first}")]
    SweepRuns { failed: usize, total: usize, first: String },

    #[error("parameter mismatch: {0}")]
    ParameterMismatch(String),

    #[error("transmit probability epsilon*lambda = {value} exceeds 1 on link {link}")]
    ProbabilityCap { link: usize, value: f64 },

    #[error("config: {0}")]
    Config(String),

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Config(e.to_string())
    }
}
