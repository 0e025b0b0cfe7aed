use thiserror::Error;

/// Failure modes of the model operations.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("empty mode set")]
    EmptyModeSet,
    #[error("invalid mode: {0}")]
    InvalidMode(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("singular point")]
    SingularPoint,
    #[error("beyond extensibility")]
    BeyondExtensibility,
    #[error("cosine modes required")]
    CosineModesRequired,
    #[error("negative time step")]
    NegativeTimeStep,
    #[error("degenerate Stokes matrix")]
    DegenerateStokes,
    #[error("degenerate Stokes matrix at t = {0}")]
    DegenerateStokesAt(f64),
    #[error("origin guard exhausted")]
    GuardExhausted,
    #[error("endpoint outside annulus: |r| = {radius} not in [{inner}, {outer}]")]
    OutsideAnnulus { radius: f64, inner: f64, outer: f64 },
    #[error("no two-segment path inside the annulus")]
    NoFeasiblePath,
    #[error("precondition violated: {0}")]
    Precondition(String),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;
