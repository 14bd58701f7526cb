//! 3D face modeling error protocols.
//!
//! * Protocol 1: ICP-register the prediction onto the groundtruth, then mean
//!   per-vertex distance normalized by the interocular distance.
//! * Protocol 2: no registration (pose errors count), mean per-vertex
//!   distance normalized by the bbox size.
//! * Radial-crop point-to-plane: crop both meshes around their nose tips,
//!   ICP-align, then RMSE of signed distances from predicted vertices to
//!   their nearest groundtruth triangle's plane.

use super::icp::{icp_rigid, IcpParams};
use crate::error::{Error, Result};
use crate::morphable::{apply_pose, Mesh};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

/// Crop radius around the nose tip, in model units (nominally mm).
pub const CROP_RADIUS: f64 = 95.0;

/// Protocol tag carried by modeling reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelingProtocol {
    #[serde(rename = "p1-icp-interocular")]
    P1IcpInterocular,
    #[serde(rename = "p2-dense-bbox")]
    P2DenseBbox,
    #[serde(rename = "p2plane-crop")]
    PointToPlaneCrop,
}

/// Per-sample modeling errors under one protocol.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelingResult {
    pub protocol: ModelingProtocol,
    pub per_sample: Vec<f64>,
    pub mean: f64,
    pub n_samples: usize,
}

impl ModelingResult {
    pub fn from_errors(protocol: ModelingProtocol, per_sample: Vec<f64>) -> Self {
        let mean = per_sample.iter().sum::<f64>() / per_sample.len().max(1) as f64;
        Self {
            protocol,
            n_samples: per_sample.len(),
            per_sample,
            mean,
        }
    }
}

fn same_topology(pred: &Mesh, gt: &Mesh, op: &'static str) -> Result<()> {
    if pred.n_vertices() != gt.n_vertices() {
        return Err(Error::ShapeMismatch {
            op,
            detail: format!(
                "{} vs {} vertices; per-vertex protocols need matching topology",
                pred.n_vertices(),
                gt.n_vertices()
            ),
        });
    }
    Ok(())
}

/// Mean same-index vertex distance between two meshes.
fn mean_vertex_distance(a: &Mesh, b: &Mesh) -> f64 {
    let (va, vb) = (a.vertices(), b.vertices());
    let n = a.n_vertices();
    let mut acc = 0.0;
    for i in 0..n {
        let d = [
            va[3 * i] - vb[3 * i],
            va[3 * i + 1] - vb[3 * i + 1],
            va[3 * i + 2] - vb[3 * i + 2],
        ];
        acc += (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    }
    acc / n as f64
}

/// Per-vertex error in an already-registered frame, normalized by the
/// interocular distance. This is the post-ICP half of protocol 1, exposed
/// separately so constructed cases can pin the registration off.
pub fn p1_error_aligned(pred: &Mesh, gt: &Mesh, interocular: f64) -> Result<f64> {
    same_topology(pred, gt, "p1_error_aligned")?;
    if !(interocular.is_finite() && interocular > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "interocular distance must be > 0, got {interocular}"
        )));
    }
    Ok(mean_vertex_distance(pred, gt) / interocular)
}

/// Protocol 1: ICP-register the prediction onto the groundtruth, then mean
/// per-vertex distance over interocular distance.
pub fn modeling_error_p1(pred: &Mesh, gt: &Mesh, interocular: f64) -> Result<f64> {
    same_topology(pred, gt, "modeling_error_p1")?;
    let icp = icp_rigid(pred.vertices(), gt.vertices(), IcpParams::default())?;
    let aligned = apply_pose(pred, &icp.pose)?;
    p1_error_aligned(&aligned, gt, interocular)
}

/// Protocol 2: mean per-vertex distance over bbox size, no registration.
pub fn modeling_error_p2(pred: &Mesh, gt_aligned: &Mesh, bbox_size: f64) -> Result<f64> {
    same_topology(pred, gt_aligned, "modeling_error_p2")?;
    if !(bbox_size.is_finite() && bbox_size > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "bbox_size must be > 0, got {bbox_size}"
        )));
    }
    Ok(mean_vertex_distance(pred, gt_aligned) / bbox_size)
}

/// Vertex indices within `radius` of the vertex at `center_index`.
fn crop_indices(mesh: &Mesh, center_index: usize, radius: f64) -> Result<Vec<usize>> {
    if center_index >= mesh.n_vertices() {
        return Err(Error::IndexOutOfRange {
            index: center_index,
            bound: mesh.n_vertices(),
        });
    }
    let center = mesh.vertex(center_index);
    let r2 = radius * radius;
    let verts = mesh.vertices();
    let kept: Vec<usize> = (0..mesh.n_vertices())
        .filter(|&i| {
            let d = [
                verts[3 * i] - center[0],
                verts[3 * i + 1] - center[1],
                verts[3 * i + 2] - center[2],
            ];
            d[0] * d[0] + d[1] * d[1] + d[2] * d[2] <= r2
        })
        .collect();
    if kept.is_empty() {
        return Err(Error::DegenerateGeometry("empty crop".into()));
    }
    Ok(kept)
}

fn gather(mesh: &Mesh, indices: &[usize]) -> Vec<f64> {
    let verts = mesh.vertices();
    let mut out = Vec::with_capacity(3 * indices.len());
    for &i in indices {
        out.extend_from_slice(&verts[3 * i..3 * i + 3]);
    }
    out
}

/// A cropped groundtruth surface: kept triangles plus consistently oriented
/// triangle normals (ordered by area-weighted vertex normals).
struct CroppedSurface {
    tri_vertices: Vec<[Vector3<f64>; 3]>,
    tri_normals: Vec<Vector3<f64>>,
}

impl CroppedSurface {
    fn build(mesh: &Mesh, kept: &[usize]) -> Result<Self> {
        let mut in_crop = vec![false; mesh.n_vertices()];
        for &i in kept {
            in_crop[i] = true;
        }
        // Area-weighted vertex normals over the whole mesh: summing the raw
        // cross products weights each incident triangle by its area.
        let verts = mesh.vertices();
        let v3 = |i: u32| {
            let i = i as usize;
            Vector3::new(verts[3 * i], verts[3 * i + 1], verts[3 * i + 2])
        };
        let mut vertex_normals = vec![Vector3::zeros(); mesh.n_vertices()];
        for tri in mesh.triangles.iter() {
            let (a, b, c) = (v3(tri[0]), v3(tri[1]), v3(tri[2]));
            let n = (b - a).cross(&(c - a));
            for &vi in tri {
                vertex_normals[vi as usize] += n;
            }
        }

        let mut tri_vertices = Vec::new();
        let mut tri_normals = Vec::new();
        for tri in mesh.triangles.iter() {
            if !tri.iter().all(|&v| in_crop[v as usize]) {
                continue;
            }
            let (a, b, c) = (v3(tri[0]), v3(tri[1]), v3(tri[2]));
            let raw = (b - a).cross(&(c - a));
            let norm = raw.norm();
            if norm < 1e-15 {
                continue; // degenerate sliver
            }
            let mut n = raw / norm;
            let reference: Vector3<f64> = tri
                .iter()
                .map(|&vi| vertex_normals[vi as usize])
                .sum();
            if n.dot(&reference) < 0.0 {
                n = -n;
            }
            tri_vertices.push([a, b, c]);
            tri_normals.push(n);
        }
        if tri_vertices.is_empty() {
            return Err(Error::DegenerateGeometry(
                "crop keeps no complete groundtruth triangle".into(),
            ));
        }
        Ok(Self {
            tri_vertices,
            tri_normals,
        })
    }

    /// Signed distance from `p` to the plane of its nearest triangle
    /// (nearest by true point-to-triangle distance, exhaustive search).
    fn signed_plane_distance(&self, p: &Vector3<f64>) -> f64 {
        let mut best = f64::INFINITY;
        let mut best_idx = 0;
        for (i, tri) in self.tri_vertices.iter().enumerate() {
            let d = point_triangle_distance_sq(p, tri);
            if d < best {
                best = d;
                best_idx = i;
            }
        }
        (p - self.tri_vertices[best_idx][0]).dot(&self.tri_normals[best_idx])
    }
}

/// Squared distance from a point to a triangle (closest-point construction).
pub(crate) fn point_triangle_distance_sq(p: &Vector3<f64>, tri: &[Vector3<f64>; 3]) -> f64 {
    let (a, b, c) = (tri[0], tri[1], tri[2]);
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;

    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return ap.norm_squared();
    }

    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return bp.norm_squared();
    }

    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (ap - ab * v).norm_squared();
    }

    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return cp.norm_squared();
    }

    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (ap - ac * w).norm_squared();
    }

    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (bp - (c - b) * w).norm_squared();
    }

    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    (p - (a + ab * v + ac * w)).norm_squared()
}

/// Radial-crop point-to-plane RMSE: crop both meshes to `CROP_RADIUS` of
/// their nose-tip vertex, ICP-align the predicted crop onto the groundtruth
/// crop, then RMSE of signed point-to-plane distances from the predicted
/// vertices to the nearest groundtruth triangle planes.
pub fn florence_rmse(pred: &Mesh, gt: &Mesh, nose_tip_index: usize) -> Result<f64> {
    let pred_kept = crop_indices(pred, nose_tip_index, CROP_RADIUS)?;
    let gt_kept = crop_indices(gt, nose_tip_index, CROP_RADIUS)?;
    let pred_pts = gather(pred, &pred_kept);
    let gt_pts = gather(gt, &gt_kept);

    let icp = icp_rigid(&pred_pts, &gt_pts, IcpParams::default())?;
    let mut aligned = pred_pts;
    crate::morphable::transform_points(&mut aligned, &icp.pose);

    let surface = CroppedSurface::build(gt, &gt_kept)?;
    let mut acc = 0.0;
    let n = aligned.len() / 3;
    for p in aligned.chunks_exact(3) {
        let d = surface.signed_plane_distance(&Vector3::new(p[0], p[1], p[2]));
        acc += d * d;
    }
    Ok((acc / n as f64).sqrt())
}

/// Point-to-plane RMSE without crop or registration; used by constructed
/// fixtures where both frames already coincide.
pub fn point_to_plane_rmse_aligned(pred: &Mesh, gt: &Mesh) -> Result<f64> {
    let all: Vec<usize> = (0..gt.n_vertices()).collect();
    let surface = CroppedSurface::build(gt, &all)?;
    let verts = pred.vertices();
    let n = pred.n_vertices();
    let mut acc = 0.0;
    for i in 0..n {
        let p = Vector3::new(verts[3 * i], verts[3 * i + 1], verts[3 * i + 2]);
        let d = surface.signed_plane_distance(&p);
        acc += d * d;
    }
    Ok((acc / n as f64).sqrt())
}
