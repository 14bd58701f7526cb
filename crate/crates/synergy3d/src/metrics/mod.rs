//! Evaluation protocols: yaw-binned NME for alignment, Euler MAE for
//! orientation, ICP registration, and the three 3D modeling errors.
//!
//! All computations here are pure; batch evaluation parallelizes per sample
//! with deterministic aggregation order.

mod alignment;
mod icp;
mod modeling;
mod orientation;
mod report;

pub use alignment::{binned_nme, nme, yaw_bin, AlignmentResult, YAW_BIN_EDGES};
pub use icp::{icp_rigid, IcpParams, IcpResult};
pub use modeling::{
    florence_rmse, modeling_error_p1, modeling_error_p2, p1_error_aligned,
    point_to_plane_rmse_aligned, ModelingProtocol, ModelingResult, CROP_RADIUS,
};
pub use orientation::{angle_abs_diff, euler_mae, OrientationResult, YAW_EXCLUSION_DEG};
pub use report::MetricsReport;
