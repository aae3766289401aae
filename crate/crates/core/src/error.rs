use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),
    #[error("iteration did not converge after {iterations} steps ({what})")]
    NoConvergence { what: String, iterations: usize },
    #[error("class {class} has only {count} samples, need at least {min}")]
    ClassTooSmall {
        class: usize,
        count: usize,
        min: usize,
    },
    #[error("need at least {min} classes, found {found}")]
    InsufficientClasses { found: usize, min: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("mixture density underflowed at observation index {0}")]
    DegenerateDensity(usize),
    #[error("cross pattern does not fit in a {p}x{q} matrix")]
    PatternTooLarge { p: usize, q: usize },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("non-finite value at {0}")]
    NonFiniteValue(String),
    #[error("channel {0} missing from trial")]
    MissingChannel(String),
    #[error("trial too short: channel {channel} has {got} samples, expected {expected}")]
    ShortTrial {
        channel: String,
        got: usize,
        expected: usize,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("replication {replication} (seed {seed}) failed: {source}")]
    Replication {
        replication: u64,
        seed: u64,
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
