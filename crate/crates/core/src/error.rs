use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the geometric and estimation routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("all rotation weights are zero")]
    AllZeroWeights,
    #[error("eigen-decomposition did not converge within {sweeps} sweeps")]
    NumericalFailure { sweeps: usize },
    #[error("points are collinear; plane is undefined")]
    DegenerateCollinear,
    #[error("arc of {arc_deg:.1} degrees is too small to fit a cylinder")]
    DegenerateArc { arc_deg: f64 },
    #[error("iteration did not converge: {0}")]
    NoConvergence(&'static str),
    #[error("normal equations are singular (condition {condition:e})")]
    SingularNormalEquations { condition: f64 },
    #[error("no pose hypotheses to fuse")]
    EmptyHypothesisSet,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("cost matrix has a non-finite entry at ({0}, {1})")]
    NonFinite(usize, usize),
    #[error("rotation axis cannot be identified from the observation")]
    DegenerateObservation,
    #[error("depth images use different intrinsics")]
    IntrinsicsMismatch,
    #[error("cannot compute recall of an empty report set")]
    EmptySet,
    #[error("invalid primitive dimensions: {0}")]
    InvalidDimensions(String),
    #[error("mask is empty")]
    EmptyMask,
    #[error("invalid symmetry declaration: {0}")]
    InvalidSymmetry(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    Data { path: PathBuf, message: String },
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, err: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            message: err.to_string(),
        }
    }

    pub fn data(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Data {
            path: path.into(),
            message: message.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code: 2 for configuration, 3 for input data, 4 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data { .. } | Error::Io { .. } => 3,
            _ => 4,
        }
    }
}
