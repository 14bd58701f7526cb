//! synergy3d: a 3D morphable face model engine plus a desk-scale synergy
//! pipeline between 3DMM parameters and 3D landmarks.
//!
//! The crate is organized around the pipeline stages:
//!
//! * [`morphable`] — deterministic 3DMM core: basis storage, frontal
//!   reconstruction, similarity pose, landmark extraction, Euler angles.
//! * [`tensor`] — a minimal reverse-mode differentiable array engine with
//!   exactly the layers the networks need, plus SGD and checkpointing.
//! * [`synergy`] — the networks and losses: observation encoder with
//!   separate decoder heads, multi-attribute landmark refinement,
//!   landmark-to-parameter regression, and the four-term training loss.
//! * [`synthdata`] — synthetic basis and dataset generation so the pipeline
//!   is trainable without real capture data.
//! * [`trainer`] — SGD training loop with the step learning-rate schedule
//!   and the ablation grid.
//! * [`metrics`] — evaluation protocols: yaw-binned NME, Euler MAE, ICP
//!   registration, interocular / bbox-normalized modeling error, and radial
//!   crop point-to-plane RMSE.
//! * [`eval`] — glue that runs a trained model over a dataset and feeds the
//!   metric protocols.

pub mod error;
pub mod eval;
pub mod metrics;
pub mod morphable;
pub mod synergy;
pub mod synthdata;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
