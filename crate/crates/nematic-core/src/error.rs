use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

/// Broad classification used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad parameters or inconsistent input.
    Input,
    /// A numerical procedure failed or produced garbage.
    Numeric,
    /// A run would exceed the resolution or memory budget.
    Resource,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("tensor is on the biaxial cone (eigenvalue gap {gap:e})")]
    ConeDegenerate { gap: f64 },
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("regime violation at eta = {eta}: xi = {xi} is not below eta")]
    RegimeViolation { eta: f64, xi: f64 },
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("non-finite value in field at voxel {index}")]
    NumericPoison { index: usize },
    #[error("line search failed after {backtracks} backtracks at iteration {iteration} (energy {energy})")]
    StepFailure { iteration: usize, backtracks: usize, energy: f64 },
    #[error("resolution error: {0}")]
    Resolution(String),
    #[error("normal extension vanishes: |v| = {min_norm} < 0.2")]
    ExtensionFailure { min_norm: f64 },
    #[error("ambiguous defect configuration in cell {cell:?} after subdivision")]
    AmbiguousCell { cell: [usize; 3] },
    #[error("internal consistency error: {0}")]
    Consistency(String),
    #[error("unsupported geometry: {0}")]
    UnsupportedGeometry(String),
    #[error("construction error: {0}")]
    Construction(String),
    #[error("budget exceeded: {0}")]
    Budget(String),
    #[error("solver did not converge (residual {residual:e})")]
    SolverFailure { residual: f64 },
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidInput(_)
            | Error::RegimeViolation { .. }
            | Error::Geometry(_)
            | Error::UnsupportedGeometry(_)
            | Error::Construction(_) => ErrorClass::Input,
            Error::Budget(_) | Error::Resolution(_) => ErrorClass::Resource,
            _ => ErrorClass::Numeric,
        }
    }
}
