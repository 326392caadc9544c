use thiserror::Error;

/// Errors produced by the simulation library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("integration failed at t = {time_ns} ns: {reason}")]
    IntegrationFailure { time_ns: f64, reason: String },

    #[error("trajectory truncated: rho_ee = {rho_ee:e} at t = {time_ns} ns has not decayed")]
    Truncated { time_ns: f64, rho_ee: f64 },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("fit did not converge after {iterations} iterations (best-so-far p_pi = {p_pi}, gamma_d = {gamma_d}, flagged invalid)")]
    FitNotConverged {
        iterations: usize,
        p_pi: f64,
        gamma_d: f64,
    },

    #[error("no root: {0}")]
    NoRoot(String),

    #[error("divergent impurity: beta_E * beta_C = 0")]
    DivergentImpurity,

    #[error("out of range: {0}")]
    OutOfRange(String),

    #[error("empty data: {0}")]
    EmptyData(String),

    #[error("missing budget factor `{0}`")]
    MissingFactor(String),

    #[error("unknown budget factor `{0}`")]
    UnknownFactor(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

/// Checks `value` is finite and inside `[lo, hi]`.
pub(crate) fn check_range(name: &'static str, value: f64, lo: f64, hi: f64) -> Result<()> {
    if !value.is_finite() || value < lo || value > hi {
        return Err(invalid(name, format!("{value} not in [{lo}, {hi}]")));
    }
    Ok(())
}
