use thiserror::Error;

/// Failure modes shared by every solver component.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("expected {expected} samples, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("non-finite value at index {0}")]
    NonFinite(usize),

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("field carries energy above mode {m}")]
    NotLowModes { m: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("blow-up at t = {t}: H2 seminorm {norm:e} exceeds the guard")]
    BlowUp { t: f64, norm: f64 },

    #[error("control window does not cover t = {t}")]
    ControlGap { t: f64 },

    #[error("need at least {need} samples, have {have}")]
    TooFewSamples { need: usize, have: usize },

    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("linearization is singular: {0}")]
    Singular(String),

    #[error("no mode count satisfies the selected conditions: {0}")]
    Infeasible(String),

    #[error("W-map not converged: two-run gap {gap:e} above tolerance {tol:e}")]
    WMapGap { gap: f64, tol: f64 },

    #[error("theta left [0, 1]: {0}")]
    ThetaOutOfRange(f64),

    #[error("degenerate sweep: {0}")]
    DegenerateSweep(String),

    #[error("sup-norm proxy {given} is below the field's sup norm {actual}")]
    SupProxyTooSmall { given: f64, actual: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
