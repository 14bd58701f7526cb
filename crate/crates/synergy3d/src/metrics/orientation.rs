//! Euler-angle MAE with the large-yaw exclusion rule.

use crate::error::{Error, Result};
use crate::morphable::EulerAngles;
use serde::{Deserialize, Serialize};

/// Groundtruth samples with |yaw| beyond this many degrees are excluded
/// from every angle's mean.
pub const YAW_EXCLUSION_DEG: f64 = 99.0;

/// Per-angle mean absolute error in degrees, plus their mean.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OrientationResult {
    pub yaw_mae: f64,
    pub pitch_mae: f64,
    pub roll_mae: f64,
    pub mean_mae: f64,
    pub n_samples: usize,
    pub n_excluded: usize,
}

/// Wraparound-aware absolute angle difference in degrees.
pub fn angle_abs_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).abs() % 360.0;
    d.min(360.0 - d)
}

/// MAE of predicted Euler angles against groundtruth. Samples whose
/// groundtruth |yaw| exceeds 99 degrees are dropped before aggregation.
pub fn euler_mae(pred: &[EulerAngles], gt: &[EulerAngles]) -> Result<OrientationResult> {
    if pred.len() != gt.len() {
        return Err(Error::ShapeMismatch {
            op: "euler_mae",
            detail: format!("{} predictions vs {} groundtruths", pred.len(), gt.len()),
        });
    }
    let mut sums = [0.0; 3];
    let mut kept = 0usize;
    for (p, g) in pred.iter().zip(gt) {
        if g.yaw.abs() > YAW_EXCLUSION_DEG {
            continue;
        }
        kept += 1;
        sums[0] += angle_abs_diff(p.yaw, g.yaw);
        sums[1] += angle_abs_diff(p.pitch, g.pitch);
        sums[2] += angle_abs_diff(p.roll, g.roll);
    }
    if kept == 0 {
        return Err(Error::InvalidConfig(
            "every sample was excluded by the yaw rule".into(),
        ));
    }
    let n = kept as f64;
    let (yaw_mae, pitch_mae, roll_mae) = (sums[0] / n, sums[1] / n, sums[2] / n);
    Ok(OrientationResult {
        yaw_mae,
        pitch_mae,
        roll_mae,
        mean_mae: (yaw_mae + pitch_mae + roll_mae) / 3.0,
        n_samples: kept,
        n_excluded: pred.len() - kept,
    })
}
