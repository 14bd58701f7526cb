//! Similarity-pose factorization and Euler-angle conversion.
//!
//! The 12-dim pose block is the row-major flattening of `[tau*R | t]`.
//! Regressed blocks are generally not exact scaled rotations, so
//! [`decompose_pose`] projects onto SO(3): scale from the mean row norm,
//! rotation from the orthogonal polar factor with determinant correction.
//!
//! Euler convention: intrinsic yaw (Y axis), pitch (X axis), roll (Z axis),
//! in degrees. At gimbal lock (|pitch| = 90 deg) roll is set to zero and yaw
//! absorbs the remaining rotation.

use crate::error::{Error, Result};
use nalgebra::{Matrix3, Vector3};

const ORTHO_TOL: f64 = 1e-9;

/// Similarity transform `v -> scale * rotation * v + translation`.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseTransform {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl PoseTransform {
    /// Validates `scale > 0` and `rotation` in SO(3) within 1e-9.
    pub fn new(scale: f64, rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::DegeneratePose(format!("scale {scale} must be positive")));
        }
        check_rotation(&rotation, ORTHO_TOL)?;
        Ok(Self {
            scale,
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Random non-degenerate pose, used by tests and the data generator.
    pub fn random<R: rand::Rng>(rng: &mut R) -> Self {
        let yaw = rng.random_range(-80.0..80.0);
        let pitch = rng.random_range(-60.0..60.0);
        let roll = rng.random_range(-60.0..60.0);
        let scale = rng.random_range(0.5..2.0);
        let translation = Vector3::new(
            rng.random_range(-10.0..10.0),
            rng.random_range(-10.0..10.0),
            rng.random_range(-10.0..10.0),
        );
        Self {
            scale,
            rotation: compose_euler(&EulerAngles {
                yaw,
                pitch,
                roll,
            }),
            translation,
        }
    }
}

/// Orientation as intrinsic Y-X-Z angles, degrees.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EulerAngles {
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
}

fn check_rotation(r: &Matrix3<f64>, tol: f64) -> Result<()> {
    let gram = r.transpose() * r;
    let err = (gram - Matrix3::identity()).norm();
    if err > tol {
        return Err(Error::NotARotation(format!(
            "R^T R deviates from I by {err:.3e} (tol {tol:.0e})"
        )));
    }
    let det = r.determinant();
    if (det - 1.0).abs() > tol.max(1e-6) {
        return Err(Error::NotARotation(format!("det = {det}, expected +1")));
    }
    Ok(())
}

/// Flattens `[tau*R | t]` row-major into the 12-dim pose block.
pub fn compose_pose_params(pose: &PoseTransform) -> [f64; 12] {
    let mut out = [0.0; 12];
    for row in 0..3 {
        for col in 0..3 {
            out[row * 4 + col] = pose.scale * pose.rotation[(row, col)];
        }
        out[row * 4 + 3] = pose.translation[row];
    }
    out
}

/// Factors a 12-dim pose block into scale, SO(3) rotation, and translation.
///
/// Scale is the mean of the three row norms of the left 3x3 block; the
/// rotation is the orthogonal polar factor of the scale-normalized block with
/// determinant correction, so noisy inputs still yield a valid rotation.
pub fn decompose_pose(pose_params: &[f64]) -> Result<PoseTransform> {
    if pose_params.len() != 12 {
        return Err(Error::ShapeMismatch {
            op: "decompose_pose",
            detail: format!("expected 12 values, got {}", pose_params.len()),
        });
    }
    let block = Matrix3::new(
        pose_params[0],
        pose_params[1],
        pose_params[2],
        pose_params[4],
        pose_params[5],
        pose_params[6],
        pose_params[8],
        pose_params[9],
        pose_params[10],
    );
    let det = block.determinant();
    if !(det.is_finite() && det > 0.0) {
        return Err(Error::DegeneratePose(format!(
            "left 3x3 block has non-positive determinant {det}"
        )));
    }
    let scale = (block.row(0).norm() + block.row(1).norm() + block.row(2).norm()) / 3.0;
    if !(scale.is_finite() && scale > 1e-12) {
        return Err(Error::DegeneratePose(format!("near-zero block norm {scale}")));
    }
    let rotation = project_so3(&(block / scale))?;
    let translation = Vector3::new(pose_params[3], pose_params[7], pose_params[11]);
    Ok(PoseTransform {
        scale,
        rotation,
        translation,
    })
}

/// Best-effort similarity factorization for regressed blocks that may be
/// degenerate (non-positive determinant, near-zero norm), as produced by
/// partially trained networks. Unlike [`decompose_pose`] this never
/// rejects: reflections are projected onto the nearest rotation and a
/// vanishing block falls back to the identity pose.
pub fn sanitize_pose_block(pose_params: &[f64; 12]) -> PoseTransform {
    let block = Matrix3::new(
        pose_params[0],
        pose_params[1],
        pose_params[2],
        pose_params[4],
        pose_params[5],
        pose_params[6],
        pose_params[8],
        pose_params[9],
        pose_params[10],
    );
    let translation = Vector3::new(pose_params[3], pose_params[7], pose_params[11]);
    let scale = (block.row(0).norm() + block.row(1).norm() + block.row(2).norm()) / 3.0;
    if !(scale.is_finite() && scale > 1e-12) {
        return PoseTransform {
            scale: 1.0,
            rotation: Matrix3::identity(),
            translation,
        };
    }
    match project_so3(&(block / scale)) {
        Ok(rotation) => PoseTransform {
            scale,
            rotation,
            translation,
        },
        Err(_) => PoseTransform {
            scale,
            rotation: Matrix3::identity(),
            translation,
        },
    }
}

/// Nearest rotation matrix in the Frobenius sense (polar factor via SVD,
/// with the usual sign flip when the orthogonal factor reflects).
pub fn project_so3(m: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    let svd = nalgebra::SVD::new(*m, true, true);
    let u = svd
        .u
        .ok_or_else(|| Error::DegeneratePose("SVD failed to produce U".into()))?;
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::DegeneratePose("SVD failed to produce V^T".into()))?;
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let flip = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        r = u * flip * v_t;
    }
    Ok(r)
}

/// Rotation matrix of the intrinsic yaw-pitch-roll composition
/// `R_y(yaw) * R_x(pitch) * R_z(roll)`, angles in degrees.
pub fn compose_euler(angles: &EulerAngles) -> Matrix3<f64> {
    let (sy, cy) = angles.yaw.to_radians().sin_cos();
    let (sp, cp) = angles.pitch.to_radians().sin_cos();
    let (sr, cr) = angles.roll.to_radians().sin_cos();
    let ry = Matrix3::new(cy, 0.0, sy, 0.0, 1.0, 0.0, -sy, 0.0, cy);
    let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, cp, -sp, 0.0, sp, cp);
    let rz = Matrix3::new(cr, -sr, 0.0, sr, cr, 0.0, 0.0, 0.0, 1.0);
    ry * rx * rz
}

/// Extracts intrinsic Y-X-Z angles (degrees) from a rotation matrix.
///
/// Rejects inputs that are not rotations within 1e-6. At |pitch| = 90 deg
/// the roll is fixed to zero and yaw carries the remaining rotation.
pub fn rotation_to_euler(r: &Matrix3<f64>) -> Result<EulerAngles> {
    check_rotation(r, 1e-6)?;
    // R = Ry(yaw) Rx(pitch) Rz(roll):
    //   R[1][2] = -sin(pitch)
    //   R[0][2] =  sin(yaw) cos(pitch),  R[2][2] = cos(yaw) cos(pitch)
    //   R[1][0] =  cos(pitch) sin(roll), R[1][1] = cos(pitch) cos(roll)
    let sp = (-r[(1, 2)]).clamp(-1.0, 1.0);
    let cp_sq = (1.0 - sp * sp).max(0.0);
    if cp_sq.sqrt() < 1e-9 {
        // Gimbal lock: roll := 0, yaw absorbs the in-plane rotation.
        let pitch = if sp > 0.0 { 90.0 } else { -90.0 };
        let yaw = if sp > 0.0 {
            r[(0, 1)].atan2(r[(0, 0)]).to_degrees()
        } else {
            (-r[(0, 1)]).atan2(r[(0, 0)]).to_degrees()
        };
        return Ok(EulerAngles {
            yaw,
            pitch,
            roll: 0.0,
        });
    }
    Ok(EulerAngles {
        yaw: r[(0, 2)].atan2(r[(2, 2)]).to_degrees(),
        pitch: sp.asin().to_degrees(),
        roll: r[(1, 0)].atan2(r[(1, 1)]).to_degrees(),
    })
}
