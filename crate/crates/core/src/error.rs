use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("volatility matrix is singular or numerically ill-conditioned (condition number {condition:.3e})")]
    SingularSigma { condition: f64 },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("finiteness hypothesis violated: rho + delta - (1 - gamma)(r + delta + |kappa|^2 / (2 gamma)) = {denominator:.6e} <= 0; the value function is not finite")]
    HypothesisViolated { denominator: f64 },

    #[error("weight solver did not converge after {iterations} iterations (last defect {defect:.3e})")]
    NoConvergence { iterations: usize, defect: f64 },

    #[error("{what} = {value} is outside [{lo}, {hi}]")]
    OutOfRange {
        what: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("boundary condition violated: |z1(-d)| = {value:.3e} exceeds {tolerance:.3e}")]
    BoundaryViolation { value: f64, tolerance: f64 },

    #[error("admissibility breach on path {path} at t = {t:.6}: total wealth {gamma:.6e} below -{tolerance:.3e}")]
    AdmissibilityBreach {
        path: usize,
        t: f64,
        gamma: f64,
        tolerance: f64,
    },

    #[error("state is outside the admissible region: total wealth {gamma:.6e} < 0")]
    InadmissibleState { gamma: f64 },

    #[error("weight tables are not comparable: {0}")]
    ConfigMismatch(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
