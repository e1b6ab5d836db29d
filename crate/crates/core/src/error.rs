use thiserror::Error;

/// One optimizer start that did not converge.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct StartTrace {
    pub start: Vec<f64>,
    pub final_point: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub message: String,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("parse error at row {row}, column {column:?}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("asset {0:?} has a constant (degenerate) return series")]
    DegenerateAsset(String),

    #[error("non-positive eigenvalue {value:e} in covariance matrix")]
    NonPositiveEigenvalue { value: f64 },

    #[error("process is not covariance stationary: spectral radius of A+B is {radius}")]
    Nonstationary { radius: f64 },

    #[error("targeting positivity violated in equation {equation}: w = {w:e}")]
    TargetingPositivity { equation: usize, w: f64 },

    #[error("non-finite eigenvalue recursion at t = {t}")]
    NonFiniteRecursion { t: usize },

    #[error("matrix is singular or ill-conditioned (condition number {condition:e})")]
    Singular { condition: f64 },

    #[error("inference refused: {0}")]
    InferenceRefused(String),

    #[error("{context}: optimizer failed to converge from {} start(s)", traces.len())]
    Convergence { context: String, traces: Vec<StartTrace> },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the CLI: 3 for convergence failures, 2 for everything a
    /// caller could fix by changing the input.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Convergence { .. } => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
