use thiserror::Error;

/// Errors raised by the simulator kernels.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("matrix field is not symmetric (max asymmetry {0:.3e})")]
    Asymmetric(f64),

    #[error("density {rho} outside admissible band [{lo}, {hi}]")]
    OutOfBand { rho: f64, lo: f64, hi: f64 },

    #[error("value {value} outside the range of f ([{lo}, {hi}])")]
    OutOfRange { value: f64, lo: f64, hi: f64 },

    #[error("constitutive law invalid: {0}")]
    InvalidLaw(String),

    #[error("interface self-intersects between segments {0} and {1}")]
    SelfIntersection(usize, usize),

    #[error("degenerate interface: {0}")]
    DegenerateCurve(String),

    #[error("degenerate level set: {0}")]
    DegenerateLevelSet(String),

    #[error("time step violates CFL bound: displacement {displacement:.3e} > {limit:.3e}")]
    CflViolation { displacement: f64, limit: f64 },

    #[error("particle depletion: {0} grid cells without particles")]
    ParticleDepletion(usize),

    #[error("solver failed to converge: {0}")]
    NoConvergence(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;
