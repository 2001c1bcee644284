use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("unsupported basis family {family} for dimension {dim}")]
    UnsupportedFamily { family: String, dim: usize },

    #[error("degenerate domain extent on axis {axis}: [{lower}, {upper}]")]
    DegenerateDomain { axis: usize, lower: f64, upper: f64 },

    #[error("point {point:?} lies outside the domain")]
    OutsideDomain { point: Vec<f64> },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("singular deformation gradient (det F = {det})")]
    Singular { det: f64 },

    #[error("infeasible state: {0}")]
    Infeasible(String),

    #[error("{solver} did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("deformed body leaves the admissible half of the truncation box (extent {extent:e} > {limit:e})")]
    BodyEscaped { extent: f64, limit: f64 },

    #[error("time step underflow at t = {t}: dt {dt:e} below minimum {dt_min:e} ({reason})")]
    StepUnderflow {
        t: f64,
        dt: f64,
        dt_min: f64,
        reason: String,
    },

    #[error("linear system is not positive definite")]
    NotPositiveDefinite,

    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(name: &str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name: name.to_string(),
        reason: reason.into(),
    }
}
