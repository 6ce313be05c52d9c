//! Error types shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or matrix shapes do not line up.
    #[error("dimension mismatch: {0}")]
    Dim(String),

    /// An argument violates its contract (temperature <= 0, empty dataset, ...).
    #[error("invalid parameter: {0}")]
    Param(String),

    /// Input data violates an invariant (label out of range, feature length off, ...).
    #[error("data error: {0}")]
    Data(String),

    /// A document or CSV file could not be parsed.
    #[error("parse error: {0}")]
    Parse(String),

    /// Training produced a non-finite loss.
    #[error("training diverged (non-finite loss) at epoch {epoch}, batch {batch}")]
    Training { epoch: usize, batch: usize },

    #[error("autodiff contract violation: {0}")]
    Contract(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
