//! Deterministic 3D morphable model core: PCA basis storage, frontal mesh
//! reconstruction, similarity-pose application, and landmark extraction.
//!
//! Conventions used throughout:
//! * A shape vector of length `3 * n_vertices` stores vertices interleaved as
//!   `x0 y0 z0 x1 y1 z1 ...`. Viewed as a column-major `3 x N` matrix this
//!   makes the vector-to-matrix step a pure reshape.
//! * Basis matrices are stored column-major, so each deformation mode is a
//!   contiguous slice.
//! * Everything in this module is `f64` and purely functional.

mod obj;
mod pose;
mod storage;

pub use obj::{read_obj, write_obj};
pub use pose::{
    compose_euler, compose_pose_params, decompose_pose, rotation_to_euler, sanitize_pose_block,
    EulerAngles, PoseTransform,
};
pub use storage::{read_basis, write_basis};

use crate::error::{Error, Result};
use std::sync::Arc;

/// Number of shape-deformation modes carried by every basis.
pub const N_SHAPE: usize = 40;
/// Number of expression-deformation modes carried by every basis.
pub const N_EXPR: usize = 10;
/// Landmarks per face under the default 68-point layout.
pub const N_LANDMARKS_DEFAULT: usize = 68;
/// Total parameter-vector length: 12 pose + 40 shape + 10 expression.
pub const PARAM_DIM: usize = 62;

/// Landmark slot of the nose tip in the 68-point layout.
pub const NOSE_TIP_LANDMARK: usize = 30;
/// Landmark slots of the outer eye corners (right, left), the interocular
/// distance endpoints.
pub const OUTER_EYE_LANDMARKS: (usize, usize) = (36, 45);

/// PCA face basis: mean shape, deformation modes, landmark table, topology.
#[derive(Debug, Clone)]
pub struct FaceBasis {
    n_vertices: usize,
    /// Mean shape, length `3 * n_vertices`, interleaved xyz.
    pub mean: Vec<f64>,
    /// Shape modes, column-major `3*n_vertices x 40`.
    pub shape_basis: Vec<f64>,
    /// Expression modes, column-major `3*n_vertices x 10`.
    pub expr_basis: Vec<f64>,
    /// Vertex index of each landmark.
    pub landmark_indices: Vec<usize>,
    /// Triangle list shared by every mesh built from this basis.
    pub triangles: Arc<Vec<[u32; 3]>>,
}

impl FaceBasis {
    /// Validates all dimension and index invariants.
    pub fn new(
        n_vertices: usize,
        mean: Vec<f64>,
        shape_basis: Vec<f64>,
        expr_basis: Vec<f64>,
        landmark_indices: Vec<usize>,
        triangles: Vec<[u32; 3]>,
    ) -> Result<Self> {
        let dim = 3 * n_vertices;
        if mean.len() != dim {
            return Err(Error::ShapeMismatch {
                op: "FaceBasis::new",
                detail: format!("mean has {} entries, expected {}", mean.len(), dim),
            });
        }
        if shape_basis.len() != dim * N_SHAPE {
            return Err(Error::ShapeMismatch {
                op: "FaceBasis::new",
                detail: format!(
                    "shape basis has {} entries, expected {}x{}",
                    shape_basis.len(),
                    dim,
                    N_SHAPE
                ),
            });
        }
        if expr_basis.len() != dim * N_EXPR {
            return Err(Error::ShapeMismatch {
                op: "FaceBasis::new",
                detail: format!(
                    "expression basis has {} entries, expected {}x{}",
                    expr_basis.len(),
                    dim,
                    N_EXPR
                ),
            });
        }
        for &idx in &landmark_indices {
            if idx >= n_vertices {
                return Err(Error::IndexOutOfRange {
                    index: idx,
                    bound: n_vertices,
                });
            }
        }
        for tri in &triangles {
            for &v in tri {
                if v as usize >= n_vertices {
                    return Err(Error::IndexOutOfRange {
                        index: v as usize,
                        bound: n_vertices,
                    });
                }
            }
        }
        Ok(Self {
            n_vertices,
            mean,
            shape_basis,
            expr_basis,
            landmark_indices,
            triangles: Arc::new(triangles),
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.n_vertices
    }

    pub fn n_landmarks(&self) -> usize {
        self.landmark_indices.len()
    }

    /// Contiguous column `j` of the shape basis.
    pub fn shape_column(&self, j: usize) -> &[f64] {
        let dim = 3 * self.n_vertices;
        &self.shape_basis[j * dim..(j + 1) * dim]
    }

    /// Contiguous column `j` of the expression basis.
    pub fn expr_column(&self, j: usize) -> &[f64] {
        let dim = 3 * self.n_vertices;
        &self.expr_basis[j * dim..(j + 1) * dim]
    }

    /// Rows of (mean, shape basis, expression basis) restricted to the
    /// landmark vertices: a `3*N_l` mean plus column-major `3*N_l x 40` and
    /// `3*N_l x 10` matrices. This is the landmark-only reconstruction model.
    pub fn landmark_slices(&self) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let nl = self.landmark_indices.len();
        let dim = 3 * self.n_vertices;
        let mut mean = Vec::with_capacity(3 * nl);
        for &idx in &self.landmark_indices {
            mean.extend_from_slice(&self.mean[3 * idx..3 * idx + 3]);
        }
        let gather = |basis: &[f64], n_cols: usize| {
            let mut out = Vec::with_capacity(3 * nl * n_cols);
            for j in 0..n_cols {
                let col = &basis[j * dim..(j + 1) * dim];
                for &idx in &self.landmark_indices {
                    out.extend_from_slice(&col[3 * idx..3 * idx + 3]);
                }
            }
            out
        };
        let shape = gather(&self.shape_basis, N_SHAPE);
        let expr = gather(&self.expr_basis, N_EXPR);
        (mean, shape, expr)
    }
}

/// 62-dim 3DMM parameter vector split into its semantic blocks.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ParamVector {
    /// Row-major flattening of the 3x4 matrix `[tau*R | t]`.
    pub pose: [f64; 12],
    /// 40 shape coefficients.
    pub shape: Vec<f64>,
    /// 10 expression coefficients.
    pub expr: Vec<f64>,
}

/// Addressable parameter blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamBlock {
    Pose,
    Shape,
    Expr,
}

impl ParamBlock {
    /// Range of this block within the flat 62-dim layout (pose, shape, expr).
    pub fn range(self) -> std::ops::Range<usize> {
        match self {
            ParamBlock::Pose => 0..12,
            ParamBlock::Shape => 12..12 + N_SHAPE,
            ParamBlock::Expr => 12 + N_SHAPE..PARAM_DIM,
        }
    }
}

impl ParamVector {
    pub fn zeros() -> Self {
        Self {
            pose: [0.0; 12],
            shape: vec![0.0; N_SHAPE],
            expr: vec![0.0; N_EXPR],
        }
    }

    /// Identity pose (`tau`=1, R=I, t=0) with zero coefficients.
    pub fn identity_pose() -> Self {
        let mut p = Self::zeros();
        p.pose = IDENTITY_POSE_PARAMS;
        p
    }

    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        if flat.len() != PARAM_DIM {
            return Err(Error::ShapeMismatch {
                op: "ParamVector::from_flat",
                detail: format!("expected {} values, got {}", PARAM_DIM, flat.len()),
            });
        }
        let mut p = Self::zeros();
        p.pose.copy_from_slice(&flat[0..12]);
        p.shape.copy_from_slice(&flat[12..52]);
        p.expr.copy_from_slice(&flat[52..62]);
        Ok(p)
    }

    pub fn to_flat(&self) -> [f64; PARAM_DIM] {
        let mut flat = [0.0; PARAM_DIM];
        flat[0..12].copy_from_slice(&self.pose);
        flat[12..52].copy_from_slice(&self.shape);
        flat[52..62].copy_from_slice(&self.expr);
        flat
    }

    pub fn block(&self, block: ParamBlock) -> &[f64] {
        match block {
            ParamBlock::Pose => &self.pose,
            ParamBlock::Shape => &self.shape,
            ParamBlock::Expr => &self.expr,
        }
    }
}

/// Row-major flattening of `[I | 0]`.
pub const IDENTITY_POSE_PARAMS: [f64; 12] =
    [1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0];

/// Triangle mesh with vertices in the interleaved layout.
#[derive(Debug, Clone)]
pub struct Mesh {
    vertices: Vec<f64>,
    pub triangles: Arc<Vec<[u32; 3]>>,
}

impl Mesh {
    /// Rejects non-finite coordinates.
    pub fn new(vertices: Vec<f64>, triangles: Arc<Vec<[u32; 3]>>) -> Result<Self> {
        if vertices.len() % 3 != 0 {
            return Err(Error::ShapeMismatch {
                op: "Mesh::new",
                detail: format!("vertex buffer length {} is not a multiple of 3", vertices.len()),
            });
        }
        if !vertices.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("mesh vertices".into()));
        }
        Ok(Self {
            vertices,
            triangles,
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len() / 3
    }

    pub fn vertex(&self, i: usize) -> [f64; 3] {
        [
            self.vertices[3 * i],
            self.vertices[3 * i + 1],
            self.vertices[3 * i + 2],
        ]
    }

    /// Interleaved xyz vertex buffer.
    pub fn vertices(&self) -> &[f64] {
        &self.vertices
    }
}

/// Ordered set of 3D landmark points, interleaved layout.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSet {
    points: Vec<f64>,
}

impl LandmarkSet {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.len() % 3 != 0 {
            return Err(Error::ShapeMismatch {
                op: "LandmarkSet::new",
                detail: format!("point buffer length {} is not a multiple of 3", points.len()),
            });
        }
        if !points.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("landmark points".into()));
        }
        Ok(Self { points })
    }

    pub fn len(&self) -> usize {
        self.points.len() / 3
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> [f64; 3] {
        [
            self.points[3 * i],
            self.points[3 * i + 1],
            self.points[3 * i + 2],
        ]
    }

    pub fn coords(&self) -> &[f64] {
        &self.points
    }
}

/// Builds the frontal mesh `mean + U_s * shape + U_e * expr`.
pub fn reconstruct_frontal(basis: &FaceBasis, shape: &[f64], expr: &[f64]) -> Result<Mesh> {
    if shape.len() != N_SHAPE {
        return Err(Error::ShapeMismatch {
            op: "reconstruct_frontal",
            detail: format!("shape coefficients: expected {}, got {}", N_SHAPE, shape.len()),
        });
    }
    if expr.len() != N_EXPR {
        return Err(Error::ShapeMismatch {
            op: "reconstruct_frontal",
            detail: format!("expression coefficients: expected {}, got {}", N_EXPR, expr.len()),
        });
    }
    let mut out = basis.mean.clone();
    for (j, &a) in shape.iter().enumerate() {
        if a != 0.0 {
            axpy(a, basis.shape_column(j), &mut out);
        }
    }
    for (j, &a) in expr.iter().enumerate() {
        if a != 0.0 {
            axpy(a, basis.expr_column(j), &mut out);
        }
    }
    Mesh::new(out, Arc::clone(&basis.triangles))
}

#[inline]
fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Applies `v -> tau * R * v + t` to every vertex.
pub fn apply_pose(mesh: &Mesh, pose: &PoseTransform) -> Result<Mesh> {
    let mut out = mesh.vertices.clone();
    transform_points(&mut out, pose);
    Mesh::new(out, Arc::clone(&mesh.triangles))
}

/// Same transform for a landmark set.
pub fn apply_pose_landmarks(landmarks: &LandmarkSet, pose: &PoseTransform) -> Result<LandmarkSet> {
    let mut out = landmarks.points.clone();
    transform_points(&mut out, pose);
    LandmarkSet::new(out)
}

pub(crate) fn transform_points(points: &mut [f64], pose: &PoseTransform) {
    let r = pose.rotation;
    let s = pose.scale;
    let m = [
        [s * r[(0, 0)], s * r[(0, 1)], s * r[(0, 2)]],
        [s * r[(1, 0)], s * r[(1, 1)], s * r[(1, 2)]],
        [s * r[(2, 0)], s * r[(2, 1)], s * r[(2, 2)]],
    ];
    let t = pose.translation;
    for v in points.chunks_exact_mut(3) {
        let (x, y, z) = (v[0], v[1], v[2]);
        v[0] = m[0][0] * x + m[0][1] * y + m[0][2] * z + t[0];
        v[1] = m[1][0] * x + m[1][1] * y + m[1][2] * z + t[1];
        v[2] = m[2][0] * x + m[2][1] * y + m[2][2] * z + t[2];
    }
}

/// Gathers mesh vertices at `indices`, order preserved.
pub fn extract_landmarks(mesh: &Mesh, indices: &[usize]) -> Result<LandmarkSet> {
    let n = mesh.n_vertices();
    let mut points = Vec::with_capacity(3 * indices.len());
    for &idx in indices {
        if idx >= n {
            return Err(Error::IndexOutOfRange {
                index: idx,
                bound: n,
            });
        }
        points.extend_from_slice(&mesh.vertices[3 * idx..3 * idx + 3]);
    }
    LandmarkSet::new(points)
}

/// Full geometric forward pass: reconstruct the frontal mesh, pose it with
/// the factored 12-dim pose block, and gather its landmarks.
pub fn full_forward(basis: &FaceBasis, params: &ParamVector) -> Result<(Mesh, LandmarkSet)> {
    let frontal = reconstruct_frontal(basis, &params.shape, &params.expr)?;
    let pose = decompose_pose(&params.pose)?;
    let posed = apply_pose(&frontal, &pose)?;
    let landmarks = extract_landmarks(&posed, &basis.landmark_indices)?;
    Ok((posed, landmarks))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    fn tiny_basis(rng: &mut ChaCha12Rng, n_vertices: usize) -> FaceBasis {
        let dim = 3 * n_vertices;
        let mean: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let shape: Vec<f64> = (0..dim * N_SHAPE).map(|_| rng.random_range(-1.0..1.0)).collect();
        let expr: Vec<f64> = (0..dim * N_EXPR).map(|_| rng.random_range(-1.0..1.0)).collect();
        let landmarks: Vec<usize> = (0..n_vertices.min(68)).collect();
        FaceBasis::new(n_vertices, mean, shape, expr, landmarks, vec![[0, 1, 2]]).unwrap()
    }

    #[test]
    fn zero_coefficients_reproduce_mean() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let basis = tiny_basis(&mut rng, 100);
        let mesh = reconstruct_frontal(&basis, &[0.0; N_SHAPE], &[0.0; N_EXPR]).unwrap();
        assert_eq!(mesh.vertices(), basis.mean.as_slice());
    }

    #[test]
    fn unit_basis_column_moves_single_coordinate() {
        let n_vertices = 50;
        let dim = 3 * n_vertices;
        let mean = vec![0.0; dim];
        let mut shape = vec![0.0; dim * N_SHAPE];
        // column 7 = e_13
        shape[7 * dim + 13] = 1.0;
        let expr = vec![0.0; dim * N_EXPR];
        let basis = FaceBasis::new(n_vertices, mean, shape, expr, vec![0], vec![]).unwrap();
        let mut coeffs = [0.0; N_SHAPE];
        coeffs[7] = 5.0;
        let mesh = reconstruct_frontal(&basis, &coeffs, &[0.0; N_EXPR]).unwrap();
        for (i, &v) in mesh.vertices().iter().enumerate() {
            if i == 13 {
                assert_eq!(v, 5.0);
            } else {
                assert_eq!(v, 0.0);
            }
        }
    }

    #[test]
    fn reconstruction_matches_triple_loop_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let basis = tiny_basis(&mut rng, 40);
        let shape: Vec<f64> = (0..N_SHAPE).map(|_| rng.random_range(-2.0..2.0)).collect();
        let expr: Vec<f64> = (0..N_EXPR).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mesh = reconstruct_frontal(&basis, &shape, &expr).unwrap();

        // Independent summation: one coordinate at a time, explicit loops.
        let dim = 3 * basis.n_vertices();
        for i in 0..dim {
            let mut expected = basis.mean[i];
            for j in 0..N_SHAPE {
                expected += basis.shape_basis[j * dim + i] * shape[j];
            }
            for j in 0..N_EXPR {
                expected += basis.expr_basis[j * dim + i] * expr[j];
            }
            let got = mesh.vertices()[i];
            let scale = expected.abs().max(1.0);
            assert!(
                (got - expected).abs() <= 1e-12 * scale,
                "coordinate {i}: {got} vs {expected}"
            );
        }
    }

    #[test]
    fn reconstruction_is_linear_in_coefficients() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let basis = tiny_basis(&mut rng, 30);
        let a_s: Vec<f64> = (0..N_SHAPE).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a_e: Vec<f64> = (0..N_EXPR).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b_s: Vec<f64> = (0..N_SHAPE).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b_e: Vec<f64> = (0..N_EXPR).map(|_| rng.random_range(-1.0..1.0)).collect();
        let sum_s: Vec<f64> = a_s.iter().zip(&b_s).map(|(a, b)| a + b).collect();
        let sum_e: Vec<f64> = a_e.iter().zip(&b_e).map(|(a, b)| a + b).collect();

        let f_a = reconstruct_frontal(&basis, &a_s, &a_e).unwrap();
        let f_b = reconstruct_frontal(&basis, &b_s, &b_e).unwrap();
        let f_sum = reconstruct_frontal(&basis, &sum_s, &sum_e).unwrap();
        let f_zero = reconstruct_frontal(&basis, &[0.0; N_SHAPE], &[0.0; N_EXPR]).unwrap();

        for i in 0..f_a.vertices().len() {
            let lhs = f_sum.vertices()[i];
            let rhs = f_a.vertices()[i] + f_b.vertices()[i] - f_zero.vertices()[i];
            assert!((lhs - rhs).abs() < 1e-9);
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let basis = tiny_basis(&mut rng, 10);
        assert!(reconstruct_frontal(&basis, &[0.0; 39], &[0.0; N_EXPR]).is_err());
        assert!(reconstruct_frontal(&basis, &[0.0; N_SHAPE], &[0.0; 11]).is_err());
    }

    #[test]
    fn identity_pose_is_a_fixed_point() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let basis = tiny_basis(&mut rng, 20);
        let mesh = reconstruct_frontal(&basis, &[0.0; N_SHAPE], &[0.0; N_EXPR]).unwrap();
        let pose = PoseTransform::identity();
        let out = apply_pose(&mesh, &pose).unwrap();
        assert_eq!(out.vertices(), mesh.vertices());
    }

    #[test]
    fn hand_checked_scale_and_translation() {
        let mesh = Mesh::new(vec![1.0, 2.0, 3.0], Arc::new(vec![])).unwrap();
        let pose = PoseTransform::new(2.0, nalgebra::Matrix3::identity(), [1.0, 0.0, 0.0].into())
            .unwrap();
        let out = apply_pose(&mesh, &pose).unwrap();
        assert_eq!(out.vertex(0), [3.0, 4.0, 6.0]);
    }

    #[test]
    fn pose_preserves_distance_ratios() {
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let n = 40;
        let verts: Vec<f64> = (0..3 * n).map(|_| rng.random_range(-10.0..10.0)).collect();
        let mesh = Mesh::new(verts, Arc::new(vec![])).unwrap();
        let pose = PoseTransform::random(&mut rng);
        let out = apply_pose(&mesh, &pose).unwrap();
        for _ in 0..50 {
            let i = rng.random_range(0..n);
            let j = rng.random_range(0..n);
            if i == j {
                continue;
            }
            let d_in = dist(mesh.vertex(i), mesh.vertex(j));
            let d_out = dist(out.vertex(i), out.vertex(j));
            if d_in > 1e-9 {
                assert!((d_out / d_in - pose.scale).abs() < 1e-9);
            }
        }
    }

    fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
    }

    #[test]
    fn landmark_gather_matches_naive_loop_and_preserves_order() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let n = 30;
        let verts: Vec<f64> = (0..3 * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mesh = Mesh::new(verts.clone(), Arc::new(vec![])).unwrap();
        let indices: Vec<usize> = (0..20).map(|_| rng.random_range(0..n)).collect();
        let lm = extract_landmarks(&mesh, &indices).unwrap();
        for (slot, &idx) in indices.iter().enumerate() {
            let expected = [verts[3 * idx], verts[3 * idx + 1], verts[3 * idx + 2]];
            assert_eq!(lm.point(slot), expected);
        }
    }

    #[test]
    fn repeated_index_repeats_point() {
        let mesh = Mesh::new(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], Arc::new(vec![])).unwrap();
        let lm = extract_landmarks(&mesh, &[1, 1]).unwrap();
        assert_eq!(lm.point(0), lm.point(1));
    }

    #[test]
    fn out_of_range_index_rejected() {
        let mesh = Mesh::new(vec![0.0; 9], Arc::new(vec![])).unwrap();
        assert!(extract_landmarks(&mesh, &[3]).is_err());
    }

    #[test]
    fn full_forward_matches_composition() {
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let basis = tiny_basis(&mut rng, 80);
        let pose = PoseTransform::random(&mut rng);
        let mut params = ParamVector::zeros();
        params.pose = compose_pose_params(&pose);
        for v in params.shape.iter_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        for v in params.expr.iter_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        let (mesh, landmarks) = full_forward(&basis, &params).unwrap();

        let frontal = reconstruct_frontal(&basis, &params.shape, &params.expr).unwrap();
        let posed = apply_pose(&frontal, &decompose_pose(&params.pose).unwrap()).unwrap();
        let expected = extract_landmarks(&posed, &basis.landmark_indices).unwrap();
        assert_eq!(mesh.vertices(), posed.vertices());
        assert_eq!(landmarks.coords(), expected.coords());
    }

    #[test]
    fn doubling_scale_doubles_landmark_distances() {
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let basis = tiny_basis(&mut rng, 80);
        let mut params = ParamVector::identity_pose();
        for v in params.shape.iter_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        let (_, lm1) = full_forward(&basis, &params).unwrap();
        let mut scaled = params.clone();
        for v in scaled.pose[..11].iter_mut() {
            *v *= 2.0; // doubles tau*R, keeps t columns 3,7,11 zero anyway
        }
        scaled.pose[11] *= 2.0;
        let (_, lm2) = full_forward(&basis, &scaled).unwrap();
        for i in 0..lm1.len() {
            for j in (i + 1)..lm1.len() {
                let d1 = dist(lm1.point(i), lm1.point(j));
                let d2 = dist(lm2.point(i), lm2.point(j));
                assert!((d2 - 2.0 * d1).abs() < 1e-9 * d1.max(1.0));
            }
        }
    }

    #[test]
    fn extract_commutes_with_apply_pose() {
        let mut rng = ChaCha12Rng::seed_from_u64(10);
        let basis = tiny_basis(&mut rng, 60);
        let mesh = reconstruct_frontal(&basis, &[0.5; N_SHAPE], &[0.2; N_EXPR]).unwrap();
        let pose = PoseTransform::random(&mut rng);
        let a = extract_landmarks(&apply_pose(&mesh, &pose).unwrap(), &basis.landmark_indices)
            .unwrap();
        let b = apply_pose_landmarks(
            &extract_landmarks(&mesh, &basis.landmark_indices).unwrap(),
            &pose,
        )
        .unwrap();
        for i in 0..a.len() {
            let (pa, pb) = (a.point(i), b.point(i));
            for k in 0..3 {
                assert!((pa[k] - pb[k]).abs() < 1e-12);
            }
        }
    }
}
