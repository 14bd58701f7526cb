//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by any synergy3d component.
#[derive(Debug, Error)]
pub enum Error {
    /// Array/tensor dimensions do not line up.
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    /// A vertex or landmark index points outside the mesh.
    #[error("index {index} out of range (n_vertices = {bound})")]
    IndexOutOfRange { index: usize, bound: usize },

    /// Pose block cannot be factored into a similarity transform.
    #[error("degenerate pose: {0}")]
    DegeneratePose(String),

    /// Input matrix is not a rotation within tolerance.
    #[error("matrix is not a rotation: {0}")]
    NotARotation(String),

    /// Point configuration too thin for a rigid solve.
    #[error("degenerate point configuration: {0}")]
    DegenerateGeometry(String),

    /// Invalid configuration value.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// A non-finite value appeared where a finite one is required.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// Training aborted (NaN loss/gradient) with location diagnostics.
    #[error("training aborted at epoch {epoch}, batch {batch}: {reason}")]
    TrainingAborted {
        epoch: usize,
        batch: usize,
        reason: String,
    },

    /// Malformed binary or text file.
    #[error("format error in {path}: {detail}")]
    Format { path: String, detail: String },

    /// Duplicate parameter registration.
    #[error("parameter '{0}' registered twice")]
    DuplicateParam(String),

    /// Named parameter missing from a checkpoint.
    #[error("checkpoint is missing tensor '{0}'")]
    MissingTensor(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
