use thiserror::Error;

/// Errors raised by the simulator and the analytical calculators.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("need more antennas than users for zero-forcing: M = {m}, K = {k}")]
    TooFewAntennas { m: usize, k: usize },

    #[error("CFO bound not identifiable: omega_max * K = {product} must be below pi")]
    CfoNotIdentifiable { product: f64 },

    #[error("{name} must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },

    #[error("CFO pilot of length N = {n} is shorter than the user count K = {k}")]
    PilotTooShort { n: usize, k: usize },

    #[error("slot lengths must satisfy N <= N_u <= N_c, got N = {n}, N_u = {n_u}, N_c = {n_c}")]
    SlotOrdering { n: usize, n_u: usize, n_c: usize },

    #[error("expected {expected} path-loss factors, got {got}")]
    BetaLength { expected: usize, got: usize },

    #[error("user {user} has only {blocks} CFO pilot block(s); correlation needs at least 2")]
    DegenerateBlocks { user: usize, blocks: usize },

    #[error("dimension mismatch: {what} expected {expected:?}, got {got:?}")]
    DimensionMismatch {
        what: &'static str,
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("Gram matrix is singular or ill-conditioned (condition number {condition:e})")]
    SingularGram { condition: f64 },

    #[error("target rate {target} bpcu not bracketed in [{lo_db}, {hi_db}] dB (rates {rate_lo:.4} .. {rate_hi:.4})")]
    BracketFailure {
        target: f64,
        lo_db: f64,
        hi_db: f64,
        rate_lo: f64,
        rate_hi: f64,
    },

    #[error("channel use {t} outside the data range [{lo}, {hi}]")]
    OutOfDataRange { t: usize, lo: usize, hi: usize },

    #[error("unknown experiment id '{0}'")]
    UnknownExperiment(String),

    #[error("invalid sweep: {0}")]
    InvalidSweep(String),

    #[error("config parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// Short machine-readable tag, used in the CLI's JSON error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::TooFewAntennas { .. }
            | Error::CfoNotIdentifiable { .. }
            | Error::NonPositive { .. }
            | Error::PilotTooShort { .. }
            | Error::SlotOrdering { .. }
            | Error::BetaLength { .. } => "validation",
            Error::DegenerateBlocks { .. } => "degenerate_blocks",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::SingularGram { .. } => "singular_gram",
            Error::BracketFailure { .. } => "bracket_failure",
            Error::OutOfDataRange { .. } => "out_of_range",
            Error::UnknownExperiment(_) => "unknown_experiment",
            Error::InvalidSweep(_) => "invalid_sweep",
            Error::Parse(_) => "parse",
            Error::Io(_) => "io",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
