//! Error types for every stage of the pipeline.
//!
//! Each simulation stage has its own enum so callers can match on the
//! failure class; `SimError` is the umbrella used by the driver and CLI.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    /// Height at or below the configured floor; the transformation is singular.
    #[error("height {h} at x={x} is at or below the floor {floor}")]
    NonPositiveHeight { h: f64, x: f64, floor: f64 },
}

#[derive(Debug, Error)]
pub enum BasisError {
    /// The 2x2 boundary system for a wall-to-interface mode lost rank.
    #[error("lifted mode {index} produced a singular boundary system (det={det})")]
    SingularLift { index: usize, det: f64 },
    /// Gram-Schmidt hit a direction with numerically zero norm.
    #[error("interior basis rank deficiency at mode {index}: residual norm {norm}")]
    RankDeficiency { index: usize, norm: f64 },
    /// Initial data violates a coupling or solvability requirement.
    #[error("initial data incompatibility: {0}")]
    CompatibilityViolation(String),
    /// Basis cache file exists but does not match the requested key.
    #[error("basis cache mismatch: {0}")]
    CacheMismatch(String),
}

#[derive(Debug, Error)]
pub enum AssemblyError {
    /// Grid cannot resolve the requested mode content.
    #[error("quadrature resolution too low: {0}")]
    InvalidResolution(String),
    /// A scale factor degenerated (height near zero on the grid).
    #[error("quadrature weight underflow: min height {min_h} on the grid")]
    QuadratureUnderflow { min_h: f64 },
    /// The velocity mass operator failed its positive-definite factorization.
    #[error("mass operator is not positive definite")]
    SingularMass,
}

#[derive(Debug, Error)]
pub enum IntegratorError {
    /// Fixed-point sweeps exhausted without meeting the residual tolerance.
    #[error("fixed-point iteration diverged at t={t}: residual {residual} after {iters} sweeps")]
    PicardDivergence { t: f64, residual: f64, iters: usize },
    /// The interface reached the height floor: contact.
    #[error("contact: min height {min_h} reached the floor {floor} at t={t}")]
    ContactReached { t: f64, min_h: f64, floor: f64 },
    /// Not enough stored states for a finite-difference window.
    #[error("need at least {needed} snapshots for the window, have {have}")]
    InsufficientWindow { needed: usize, have: usize },
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Error)]
pub enum IoError {
    /// Config document failed structural validation.
    #[error("config schema error: {0}")]
    SchemaError(String),
    /// Checkpoint or cache version does not match this build.
    #[error("version mismatch: file has {found}, expected {expected}")]
    VersionMismatch { found: String, expected: String },
    #[error("config hash mismatch: checkpoint was produced by a different config")]
    ConfigHashMismatch,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Integrator(#[from] IntegratorError),
    #[error(transparent)]
    Io(#[from] IoError),
}

impl SimError {
    /// Process exit code contract: 0 success, 2 contact, 3 fixed-point
    /// divergence, 4 config error, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            SimError::Integrator(IntegratorError::ContactReached { .. }) => 2,
            SimError::Integrator(IntegratorError::PicardDivergence { .. }) => 3,
            SimError::Io(IoError::SchemaError(_)) => 4,
            SimError::Io(IoError::Json(_)) => 4,
            _ => 1,
        }
    }
}
