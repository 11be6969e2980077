use thiserror::Error;

/// Errors raised by the data, fitting, cost and solver routines.
#[derive(Debug, Error)]
pub enum DpcError {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        found: usize,
    },

    #[error("insufficient data: need at least {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("infeasible: {what} (residual norm {residual:.3e})")]
    Infeasible { what: String, residual: f64 },

    #[error("matrix is not symmetric (max asymmetry {asymmetry:.3e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("closed form unavailable: {0}")]
    ClosedFormUnavailable(String),

    #[error("problem is unbounded below")]
    Unbounded,

    #[error("active-set iteration limit ({0}) reached")]
    IterationLimit(usize),

    #[error("assumption violated: {0}")]
    AssumptionViolated(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, DpcError>;

pub(crate) fn check_dim(context: &str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(DpcError::DimensionMismatch {
            context: context.to_string(),
            expected,
            found,
        })
    }
}
