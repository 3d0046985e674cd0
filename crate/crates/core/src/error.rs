use thiserror::Error;

/// Errors produced by the engine. Dimension and index errors carry enough
/// context to identify the offending shapes without a debugger.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: index {index} out of range for length {len}")]
    Index {
        op: &'static str,
        index: usize,
        len: usize,
    },

    #[error("domain error in {op}: {msg}")]
    Domain { op: &'static str, msg: String },

    #[error("contract violation in {op}: {msg}")]
    Contract { op: &'static str, msg: String },

    #[error("non-finite value ({value}) in {context}")]
    NonFinite { context: String, value: f64 },

    #[error("scene {id} has {n_objects} objects; at least 2 required")]
    SceneTooSmall { id: String, n_objects: usize },

    #[error("invalid generator spec: {0}")]
    Spec(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: {msg}")]
    Diverged {
        epoch: usize,
        batch: usize,
        msg: String,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("gradient check failed: {0} parameter tensor(s) above tolerance")]
    GradCheckFailed(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for failures of the numerics themselves (NaN, divergence,
    /// gradient mismatch) as opposed to bad input. The CLI maps these to
    /// exit code 2.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite { .. } | Error::Diverged { .. } | Error::GradCheckFailed(_)
        )
    }
}
