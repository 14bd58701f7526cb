//! Iterative closest point rigid registration.
//!
//! Alternates exact nearest-neighbor correspondence with the closed-form
//! orthogonal-Procrustes rigid solve, tracking the RMS residual per
//! iteration. The residual sequence is non-increasing: the solve minimizes
//! it for fixed correspondences and re-matching can only shrink it.

use crate::error::{Error, Result};
use crate::morphable::PoseTransform;
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

/// Registration outcome: rigid transform (scale fixed at 1), terminal RMS
/// residual, and the per-iteration residual trace.
#[derive(Debug, Clone)]
pub struct IcpResult {
    pub pose: PoseTransform,
    pub residual: f64,
    pub trace: Vec<f64>,
    pub iterations: usize,
}

/// Default iteration cap and residual-change tolerance.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct IcpParams {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for IcpParams {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol: 1e-10,
        }
    }
}

fn as_points(data: &[f64], what: &str) -> Result<Vec<Vector3<f64>>> {
    if data.len() % 3 != 0 || data.len() < 9 {
        return Err(Error::DegenerateGeometry(format!(
            "{what} needs at least 3 xyz points, got {} values",
            data.len()
        )));
    }
    Ok(data
        .chunks_exact(3)
        .map(|c| Vector3::new(c[0], c[1], c[2]))
        .collect())
}

/// Exact nearest neighbor by brute force (desk-scale point counts).
fn nearest(dst: &[Vector3<f64>], query: &Vector3<f64>) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, p) in dst.iter().enumerate() {
        let d = (p - query).norm_squared();
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Closed-form rigid solve (rotation + translation, no scale) mapping
/// `src[i]` onto `dst[pair[i]]`. Rejects rank-deficient configurations.
pub(crate) fn rigid_procrustes(
    src: &[Vector3<f64>],
    dst: &[Vector3<f64>],
) -> Result<(Matrix3<f64>, Vector3<f64>)> {
    let n = src.len() as f64;
    let cs: Vector3<f64> = src.iter().sum::<Vector3<f64>>() / n;
    let cd: Vector3<f64> = dst.iter().sum::<Vector3<f64>>() / n;
    let mut h = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (s - cs) * (d - cd).transpose();
    }
    let svd = nalgebra::SVD::new(h, true, true);
    let u = svd
        .u
        .ok_or_else(|| Error::DegenerateGeometry("SVD failed in rigid solve".into()))?;
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::DegenerateGeometry("SVD failed in rigid solve".into()))?;
    let sigma = svd.singular_values;
    if !(sigma[0] > 0.0) || sigma[1] <= 1e-12 * sigma[0] {
        return Err(Error::DegenerateGeometry(format!(
            "rank-deficient correspondence covariance (singular values {:?})",
            sigma
        )));
    }
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let r = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose();
    let t = cd - r * cs;
    Ok((r, t))
}

/// Registers `src` onto `dst`; both are interleaved xyz buffers.
pub fn icp_rigid(src: &[f64], dst: &[f64], params: IcpParams) -> Result<IcpResult> {
    let src_pts = as_points(src, "icp source")?;
    let dst_pts = as_points(dst, "icp destination")?;

    let mut rotation = Matrix3::identity();
    let mut translation = Vector3::zeros();
    let mut trace = Vec::new();
    let mut prev_residual = f64::INFINITY;

    for iter in 0..params.max_iter.max(1) {
        let moved: Vec<Vector3<f64>> =
            src_pts.iter().map(|p| rotation * p + translation).collect();
        let corr: Vec<Vector3<f64>> =
            moved.iter().map(|p| dst_pts[nearest(&dst_pts, p)]).collect();
        let (r, t) = rigid_procrustes(&src_pts, &corr)?;
        rotation = r;
        translation = t;
        let residual = (src_pts
            .iter()
            .zip(&corr)
            .map(|(s, d)| (rotation * s + translation - d).norm_squared())
            .sum::<f64>()
            / src_pts.len() as f64)
            .sqrt();
        trace.push(residual);
        if (prev_residual - residual).abs() < params.tol {
            prev_residual = residual;
            break;
        }
        prev_residual = residual;
        let _ = iter;
    }

    Ok(IcpResult {
        pose: PoseTransform::new(1.0, rotation, translation)?,
        residual: prev_residual,
        iterations: trace.len(),
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::morphable::{compose_euler, EulerAngles};
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    fn cloud(rng: &mut ChaCha12Rng, n: usize, extent: f64) -> Vec<f64> {
        (0..3 * n).map(|_| rng.random_range(-extent..extent)).collect()
    }

    fn apply(points: &[f64], r: &Matrix3<f64>, t: &Vector3<f64>) -> Vec<f64> {
        points
            .chunks_exact(3)
            .flat_map(|p| {
                let q = r * Vector3::new(p[0], p[1], p[2]) + t;
                [q.x, q.y, q.z]
            })
            .collect()
    }

    #[test]
    fn identity_on_identical_clouds() {
        let mut rng = ChaCha12Rng::seed_from_u64(91);
        let src = cloud(&mut rng, 100, 50.0);
        let out = icp_rigid(&src, &src, IcpParams::default()).unwrap();
        assert!(out.residual < 1e-12);
        assert!((out.pose.rotation - Matrix3::identity()).norm() < 1e-9);
        assert!(out.pose.translation.norm() < 1e-9);
    }

    #[test]
    fn recovers_known_rigid_transform() {
        let mut rng = ChaCha12Rng::seed_from_u64(92);
        let src = cloud(&mut rng, 500, 50.0);
        let r = compose_euler(&EulerAngles {
            yaw: 14.0,
            pitch: -8.0,
            roll: 21.0,
        });
        let t = Vector3::new(4.0, -2.0, 7.0);
        let dst = apply(&src, &r, &t);
        let out = icp_rigid(&src, &dst, IcpParams::default()).unwrap();
        let angle_err = ((out.pose.rotation.transpose() * r).trace() - 1.0) / 2.0;
        let angle_deg = angle_err.clamp(-1.0, 1.0).acos().to_degrees();
        assert!(angle_deg < 0.1, "rotation error {angle_deg} deg");
        assert!((out.pose.translation - t).norm() < 1e-3);
    }

    #[test]
    fn residual_trace_is_non_increasing() {
        let mut rng = ChaCha12Rng::seed_from_u64(93);
        let src = cloud(&mut rng, 200, 30.0);
        let r = compose_euler(&EulerAngles {
            yaw: 25.0,
            pitch: 10.0,
            roll: -15.0,
        });
        let t = Vector3::new(3.0, 1.0, -2.0);
        let mut dst = apply(&src, &r, &t);
        for v in dst.iter_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
        let out = icp_rigid(&src, &dst, IcpParams::default()).unwrap();
        for w in out.trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "trace increased: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn collinear_points_rejected() {
        let src: Vec<f64> = (0..10).flat_map(|i| [i as f64, 0.0, 0.0]).collect();
        assert!(icp_rigid(&src, &src, IcpParams::default()).is_err());
    }

    #[test]
    fn too_few_points_rejected() {
        assert!(icp_rigid(&[0.0; 6], &[0.0; 6], IcpParams::default()).is_err());
    }
}
