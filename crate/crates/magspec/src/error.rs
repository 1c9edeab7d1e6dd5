//! Error taxonomy shared across the crate.
//!
//! The variants mirror the CLI exit codes: configuration problems exit with
//! code 2, numeric/solver failures with 3, acceptance-threshold violations
//! with 4.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A point or field argument fell outside the computational domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// A traced geodesic exhausted its step budget before leaving the domain.
    #[error("trapping error: geodesic from ({x:.4}, {y:.4}) did not exit within {steps} steps")]
    Trapping { x: f64, y: f64, steps: usize },

    /// Conjugate points or a non-convex boundary were detected.
    #[error("geometry error: {0}")]
    Geometry(String),

    /// An iterative solver failed to reach its tolerance.
    #[error("solver error: {context} (residual {residual:.3e} after {iterations} iterations)")]
    Solver {
        context: String,
        residual: f64,
        iterations: usize,
    },

    /// Invalid input to an operation (wrong sizes, complex where real required, ...).
    #[error("input error: {0}")]
    Input(String),

    /// A resolution guard tripped (mesh too coarse for the requested h or K).
    #[error("resolution error: {0}")]
    Resolution(String),

    /// The requested spectral parameter sits too close to an eigenvalue.
    #[error("resolvent error: z = {z} within {gap:.3e} of eigenvalue {lambda}")]
    Resolvent { z: f64, lambda: f64, gap: f64 },

    /// Extraction phase guard violated: |E| reached 1 somewhere on the fan.
    #[error("phase guard violation: potential too large for unambiguous phase (max |E| = {max_e:.4})")]
    PhaseGuard { max_e: f64 },

    /// Configuration file problems.
    #[error("config error: {0}")]
    Config(String),

    /// An acceptance threshold was violated in strict mode.
    #[error("acceptance check failed: {0}")]
    Acceptance(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn solver(context: impl Into<String>, residual: f64, iterations: usize) -> Self {
        Error::Solver {
            context: context.into(),
            residual,
            iterations,
        }
    }

    /// CLI exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Input(_) | Error::Io(_) => 2,
            Error::Acceptance(_) => 4,
            _ => 3,
        }
    }
}
