use thiserror::Error;

use crate::tensor::Shape;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("tape already consumed by a previous backward pass")]
    TapeConsumed,

    #[error("backward requires a (1,1,1,1) loss, got {0}")]
    NonScalarLoss(Shape),

    #[error("empty tape")]
    EmptyTape,

    #[error(
        "batch norm `{0}` has no running statistics; train first or initialize them explicitly"
    )]
    MissingStatistics(String),

    #[error("training diverged at step {step}: loss = {loss}")]
    Divergence { step: usize, loss: f64 },

    #[error(
        "no stage-3 depth lands within {budget:.4e} ± {tol}: nearest below = {below:?}, nearest above = {above:?} (depth, MACs)"
    )]
    BudgetUnreachable {
        budget: f64,
        tol: f64,
        below: Option<(usize, u64)>,
        above: Option<(usize, u64)>,
    },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("malformed data: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// Validation failures that a caller should report as bad input rather
    /// than a runtime fault.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::Shape { .. }
                | Error::EmptyDataset
                | Error::BudgetUnreachable { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
