use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("field grids differ")]
    GridMismatch,

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("growth function violates its declared bounds: {0}")]
    GrowthBounds(String),

    #[error("degenerate thickness: min h = {min_h:e} (must be > 0)")]
    DegenerateThickness { min_h: f64 },

    #[error("degenerate ice mass: min h = {min_h:e} (must be > 0)")]
    DegenerateMass { min_h: f64 },

    #[error("CFL violation: dt = {dt:e} exceeds the stability bound {limit:e}")]
    CflViolation { dt: f64, limit: f64 },

    #[error("linear solver did not converge: {iterations} iterations, relative residual {residual:e}")]
    SolverNotConverged { iterations: usize, residual: f64 },

    #[error("Picard iteration is not contracting (ratios {ratios:?})")]
    NonContraction { ratios: [f64; 3] },

    #[error("Picard iteration did not converge in {iterations} iterations (last distance {distance:e})")]
    PicardNotConverged { iterations: usize, distance: f64 },

    #[error("bound violated at t = {t}: {what}")]
    BoundViolation { t: f64, what: String },

    #[error("non-finite value produced in {0}")]
    NonFinite(&'static str),

    #[error("precondition violated: {0}")]
    Precondition(String),
}
