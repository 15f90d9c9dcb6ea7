use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A model, numerics or schedule description violates its invariants.
    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    /// A two-site gate couples sectors with different particle number.
    #[error("gate on bond {bond} does not conserve particle number (element {row},{col} = {value:e})")]
    ChargeViolation {
        bond: usize,
        row: usize,
        col: usize,
        value: f64,
    },

    /// A jump operator annihilated the state; the channel should never have
    /// been selected.
    #[error("jump on site {site} annihilated the state (weight {weight:e})")]
    Annihilated { site: usize, weight: f64 },

    /// The state has zero norm and cannot be normalized.
    #[error("cannot normalize a state of norm {0:e}")]
    ZeroNorm(f64),

    #[error("site {site} out of range 1..={sites}")]
    SiteOutOfRange { site: usize, sites: usize },

    #[error("cut {cut} out of range 1..={max}")]
    CutOutOfRange { cut: usize, max: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    /// The per-step jump probability exceeds the first-order guard.
    #[error("total jump probability per step {total:.4} exceeds {limit}; reduce dt")]
    StepSizeGuard { total: f64, limit: f64 },

    #[error("observable series are sampled on different time grids")]
    GridMismatch,

    #[error("window of {window} samples is longer than the series ({len})")]
    WindowTooLong { window: usize, len: usize },

    /// Dense oracle refuses a system that would not fit in memory/time.
    #[error("{what} limited to M <= {max} sites, got M = {sites}")]
    Capacity {
        what: &'static str,
        sites: usize,
        max: usize,
    },

    #[error("master-equation integration failed: trace drift {drift:e} at t = {time}")]
    IntegratorFailure { drift: f64, time: f64 },

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    /// Configuration error with the offending key path.
    #[error("config key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidSpec(msg.into())
    }

    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }
}
