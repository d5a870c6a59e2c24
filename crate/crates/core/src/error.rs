use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("assumption violated for `{field}`: {reason}")]
    AssumptionViolation { field: &'static str, reason: String },

    #[error("domain error: {0}")]
    DomainError(String),

    #[error("bad grid: {0}")]
    BadGrid(String),

    #[error("HJB iteration did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("negative density {value:.3e} at node {index}")]
    NegativeDensity { index: usize, value: f64 },

    #[error("high-income saving never changes sign on the grid; the support exceeds x_max")]
    NoCrossing,

    #[error("singular linear system: {0}")]
    SingularSolve(String),

    #[error("no sign change of excess supply on [{lo}, {hi}] (phi = {phi_lo:.4e}, {phi_hi:.4e})")]
    NoBracket { lo: f64, hi: f64, phi_lo: f64, phi_hi: f64 },

    #[error("far-field window has too few nodes: {0}")]
    WindowTooSmall(String),

    #[error("power-law fit failed: {0}")]
    FitFailure(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by bad input rather than a solver failure.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::AssumptionViolation { .. } | Error::Config(_) | Error::BadGrid(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
