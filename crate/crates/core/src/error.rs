use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("bandwidth {bandwidth} Hz aliases at sample rate {sample_rate} Hz")]
    Aliasing { bandwidth: f64, sample_rate: f64 },

    #[error("insufficient resolution: {0}")]
    Resolution(String),

    #[error("degenerate signal: {0}")]
    DegenerateSignal(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },

    #[error("{function}: argument {x} outside domain")]
    Domain { function: &'static str, x: f64 },

    #[error("matrix is not symmetric positive definite ({0})")]
    NotPositiveDefinite(String),

    #[error("normalizer diverges for p = {p}, r = {r}")]
    Divergent { p: f64, r: f64 },

    #[error("estimator failure: {0}")]
    Estimator(String),

    #[error("unreliable importance sampling estimate: ESS {ess:.1} of {draws} draws")]
    UnreliableEstimate { ess: f64, draws: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("lower bound decreased from {previous} to {current} at iteration {iteration}")]
    ElboDecrease {
        iteration: usize,
        previous: f64,
        current: f64,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("unsupported format version: expected `{expected}`, found `{found}`")]
    Version { expected: String, found: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::Validation(_)
            | Error::Aliasing { .. }
            | Error::Resolution(_)
            | Error::Shape { .. }
            | Error::Parse { .. }
            | Error::Version { .. }
            | Error::Io(_) => 2,
            _ => 3,
        }
    }
}
