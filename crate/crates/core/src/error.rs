use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("quadrature produced a non-finite value")]
    QuadratureFailure,

    #[error("stencil too coarse: {cells_per_radius:.3} cells per kernel radius, at least 4 required")]
    CoarseStencil { cells_per_radius: f64 },

    #[error("grid needs {nodes} nodes, budget is {budget}")]
    GridTooLarge { nodes: u128, budget: usize },

    #[error("non-finite value {value} at node {index}")]
    NonFinite { index: usize, value: f64 },

    #[error("no grid node strictly inside radius {radius}")]
    EmptyBall { radius: f64 },

    #[error("grid spacing {field} does not match kernel spacing {kernel}")]
    SpacingMismatch { field: f64, kernel: f64 },

    #[error("dimension mismatch: field is {field}-D, kernel is {kernel}-D")]
    DimensionMismatch { field: usize, kernel: usize },

    #[error("field is nonzero outside the ball mask (max |u| = {max_abs:e})")]
    NotMasked { max_abs: f64 },

    #[error("field vanishes identically")]
    ZeroField,

    #[error("radius {radius} plus kernel support needs half width {required}, grid has {available}")]
    DomainTooSmall { radius: f64, required: f64, available: f64 },

    #[error("power iteration did not converge in {iterations} iterations (delta {delta:e}, residual {residual:e})")]
    NoConvergence {
        iterations: usize,
        delta: f64,
        residual: f64,
    },

    #[error("power iteration collapsed to the zero field")]
    Collapse,

    #[error("upper barrier is not positive at node {index} (value {value:e})")]
    DegenerateBarrier { index: usize, value: f64 },

    #[error("annulus {inner} <= |x| < {outer} contains no grid node")]
    EmptyAnnulus { inner: f64, outer: f64 },

    #[error("maximum principle violated at t = {t}: node {index} has u = {value:e}, admissible range [0, {upper:e}]")]
    MaximumPrinciple {
        t: f64,
        index: usize,
        value: f64,
        upper: f64,
    },

    #[error("integration step too large: closed form and numeric solution differ by {residual:e}")]
    StepTooLarge { residual: f64 },

    #[error("mass loss {loss:e} through the box boundary exceeds the budget {budget:e}")]
    MassLoss { loss: f64, budget: f64 },

    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("subsolution violated at t = {t}: slack {slack:e} below -{allowed:e}")]
    BarrierViolation { t: f64, slack: f64, allowed: f64 },

    #[error("malformed field dump: {0}")]
    MalformedDump(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
