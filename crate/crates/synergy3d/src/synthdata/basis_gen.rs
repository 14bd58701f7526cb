//! Synthetic face basis: a half-ellipsoid vertex grid with a 68-point
//! landmark layout along symmetric feature curves, plus smooth random
//! deformation modes orthonormalized column-wise.

use crate::error::{Error, Result};
use crate::morphable::{FaceBasis, N_EXPR, N_SHAPE};
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;

/// Ellipsoid semi-axes in model units: width, height, depth. Unit-ish
/// scale keeps every loss-gradient magnitude O(1), so one SGD rate serves
/// the whole parameter vector.
const SEMI_AXES: [f64; 3] = [0.70, 0.95, 0.80];
/// Parameter ranges of the grid, degrees: azimuth (left-right) and
/// elevation (down-up), kept away from the poles.
const THETA_MAX: f64 = 88.0;
const PHI_MAX: f64 = 80.0;

fn surface_point(theta_deg: f64, phi_deg: f64) -> [f64; 3] {
    let (st, ct) = theta_deg.to_radians().sin_cos();
    let (sp, cp) = phi_deg.to_radians().sin_cos();
    [
        SEMI_AXES[0] * st * cp,
        SEMI_AXES[1] * sp,
        SEMI_AXES[2] * ct * cp,
    ]
}

/// Canonical 68-point layout in (theta, phi) parameter coordinates, using
/// the usual slot order: jaw 0-16, brows 17-26, nose 27-35, eyes 36-47,
/// outer lips 48-59, inner lips 60-67. Slots 36/45 are the outer eye
/// corners and slot 30 is the nose tip.
fn landmark_curve_positions() -> Vec<(f64, f64)> {
    let mut pos = Vec::with_capacity(68);
    // jaw: ear level down to the chin and back up, symmetric
    for i in 0..17 {
        let t = i as f64 / 16.0;
        let theta = -75.0 + 150.0 * t;
        let phi = -15.0 - 55.0 * (std::f64::consts::PI * t).sin();
        pos.push((theta, phi));
    }
    // brows, arched; the left brow mirrors the right one
    for i in 0..5 {
        let t = i as f64 / 4.0;
        let arch = 6.0 * (std::f64::consts::PI * t).sin();
        pos.push((-55.0 + 40.0 * t, 25.0 + arch));
    }
    for i in 0..5 {
        let (theta_r, phi_r) = pos[17 + (4 - i)];
        pos.push((-theta_r, phi_r));
    }
    // nose bridge down to the tip (slot 30)
    for (i, phi) in [15.0, 7.0, -1.0, -9.0].iter().enumerate() {
        let _ = i;
        pos.push((0.0, *phi));
    }
    // nose base
    for theta in [-12.0, -6.0, 0.0, 6.0, 12.0] {
        pos.push((theta, -18.0));
    }
    // right eye hexagon, slot 36 is the outer corner
    pos.push((-38.0, 12.0));
    pos.push((-33.0, 15.0));
    pos.push((-27.0, 15.0));
    pos.push((-22.0, 12.0));
    pos.push((-27.0, 9.0));
    pos.push((-33.0, 9.0));
    // left eye hexagon, slot 45 is the outer corner
    pos.push((22.0, 12.0));
    pos.push((27.0, 15.0));
    pos.push((33.0, 15.0));
    pos.push((38.0, 12.0));
    pos.push((33.0, 9.0));
    pos.push((27.0, 9.0));
    // outer lips: 12 points around an ellipse centred below the nose
    let (cx, cy, rx, ry) = (0.0, -35.0, 20.0, 8.0);
    for i in 0..12 {
        let ang = std::f64::consts::PI + i as f64 / 12.0 * std::f64::consts::TAU;
        pos.push((cx + rx * ang.cos(), cy - ry * ang.sin()));
    }
    // inner lips: 8 points, smaller ellipse
    let (rx, ry) = (12.0, 4.0);
    for i in 0..8 {
        let ang = std::f64::consts::PI + i as f64 / 8.0 * std::f64::consts::TAU;
        pos.push((cx + rx * ang.cos(), cy - ry * ang.sin()));
    }
    debug_assert_eq!(pos.len(), 68);
    pos
}

/// Smooth random scalar field over the grid parameters: a low-order
/// trigonometric series with amplitude decay toward higher frequencies.
fn smooth_field<R: Rng>(rng: &mut R) -> impl Fn(f64, f64) -> f64 {
    const ORDER: usize = 4;
    let mut coeffs = Vec::with_capacity(ORDER * ORDER * 4);
    for p in 0..ORDER {
        for q in 0..ORDER {
            let damp = 1.0 / (1.0 + (p + q) as f64);
            for _ in 0..4 {
                coeffs.push(rng.random_range(-1.0..1.0) * damp);
            }
        }
    }
    move |theta: f64, phi: f64| {
        let u = theta / THETA_MAX * std::f64::consts::PI;
        let v = phi / PHI_MAX * std::f64::consts::PI;
        let mut acc = 0.0;
        let mut idx = 0;
        for p in 0..ORDER {
            for q in 0..ORDER {
                let (pu, qv) = (p as f64 * u, q as f64 * v);
                acc += coeffs[idx] * pu.cos() * qv.cos()
                    + coeffs[idx + 1] * ((p + 1) as f64 * u).sin() * qv.cos()
                    + coeffs[idx + 2] * pu.cos() * ((q + 1) as f64 * v).sin()
                    + coeffs[idx + 3]
                        * ((p + 1) as f64 * u).sin()
                        * ((q + 1) as f64 * v).sin();
                idx += 4;
            }
        }
        acc
    }
}

/// Modified Gram-Schmidt with one re-orthogonalization pass.
fn orthonormalize_columns(data: &mut [f64], dim: usize, n_cols: usize) -> Result<()> {
    for j in 0..n_cols {
        for _pass in 0..2 {
            for i in 0..j {
                let dot: f64 = {
                    let (head, tail) = data.split_at(j * dim);
                    let qi = &head[i * dim..(i + 1) * dim];
                    let vj = &tail[..dim];
                    qi.iter().zip(vj).map(|(a, b)| a * b).sum()
                };
                let (head, tail) = data.split_at_mut(j * dim);
                let qi = &head[i * dim..(i + 1) * dim];
                let vj = &mut tail[..dim];
                for (v, q) in vj.iter_mut().zip(qi) {
                    *v -= dot * q;
                }
            }
        }
        let col = &mut data[j * dim..(j + 1) * dim];
        let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-9 {
            return Err(Error::DegenerateGeometry(format!(
                "basis column {j} is linearly dependent"
            )));
        }
        for v in col.iter_mut() {
            *v /= norm;
        }
    }
    Ok(())
}

/// Builds a deterministic synthetic basis with exactly `n_vertices`
/// vertices. Requires `n_vertices >= 68` so each landmark can claim its own
/// vertex.
pub fn make_synthetic_basis(seed: u64, n_vertices: usize) -> Result<FaceBasis> {
    if n_vertices < 68 {
        return Err(Error::InvalidConfig(format!(
            "a synthetic basis needs at least 68 vertices, requested {n_vertices}"
        )));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);

    // Grid slightly taller than wide; the last row may be partial.
    let cols = ((n_vertices as f64 / 1.25).sqrt().round() as usize).max(9);
    let rows = n_vertices.div_ceil(cols);
    let grid_param = |i: usize, j: usize| {
        let theta = -THETA_MAX + 2.0 * THETA_MAX * j as f64 / (cols - 1) as f64;
        let phi = -PHI_MAX + 2.0 * PHI_MAX * i as f64 / (rows - 1) as f64;
        (theta, phi)
    };

    let mut mean = Vec::with_capacity(3 * n_vertices);
    let mut params = Vec::with_capacity(n_vertices);
    'outer: for i in 0..rows {
        for j in 0..cols {
            if params.len() == n_vertices {
                break 'outer;
            }
            let (theta, phi) = grid_param(i, j);
            mean.extend_from_slice(&surface_point(theta, phi));
            params.push((theta, phi));
        }
    }

    // Triangulate full grid cells whose four corners were kept.
    let mut triangles = Vec::new();
    for i in 0..rows - 1 {
        for j in 0..cols - 1 {
            let v00 = i * cols + j;
            let v01 = v00 + 1;
            let v10 = v00 + cols;
            let v11 = v10 + 1;
            if v11 < n_vertices {
                triangles.push([v00 as u32, v01 as u32, v11 as u32]);
                triangles.push([v00 as u32, v11 as u32, v10 as u32]);
            }
        }
    }

    // Landmarks: nearest unused vertex to each canonical feature position.
    let mut landmark_indices = Vec::with_capacity(68);
    let mut used = vec![false; n_vertices];
    for (theta, phi) in landmark_curve_positions() {
        let target = surface_point(theta, phi);
        let mut best = None;
        let mut best_d = f64::INFINITY;
        for (v, taken) in used.iter().enumerate() {
            if *taken {
                continue;
            }
            let p = &mean[3 * v..3 * v + 3];
            let d = (p[0] - target[0]).powi(2)
                + (p[1] - target[1]).powi(2)
                + (p[2] - target[2]).powi(2);
            if d < best_d {
                best_d = d;
                best = Some(v);
            }
        }
        let v = best.expect("n_vertices >= 68 guarantees a free vertex");
        used[v] = true;
        landmark_indices.push(v);
    }

    // Deformation modes: smooth random fields, orthonormalized per matrix.
    let dim = 3 * n_vertices;
    let mut build_modes = |n_cols: usize| -> Vec<f64> {
        let mut data = vec![0.0; dim * n_cols];
        for col in 0..n_cols {
            let fields = [
                smooth_field(&mut rng),
                smooth_field(&mut rng),
                smooth_field(&mut rng),
            ];
            let out = &mut data[col * dim..(col + 1) * dim];
            for (v, &(theta, phi)) in params.iter().enumerate() {
                for axis in 0..3 {
                    out[3 * v + axis] = fields[axis](theta, phi);
                }
            }
        }
        data
    };
    let mut shape_basis = build_modes(N_SHAPE);
    let mut expr_basis = build_modes(N_EXPR);
    orthonormalize_columns(&mut shape_basis, dim, N_SHAPE)?;
    orthonormalize_columns(&mut expr_basis, dim, N_EXPR)?;

    FaceBasis::new(
        n_vertices,
        mean,
        shape_basis,
        expr_basis,
        landmark_indices,
        triangles,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_fewer_than_68_vertices() {
        assert!(make_synthetic_basis(0, 67).is_err());
    }

    #[test]
    fn exact_vertex_count_and_distinct_landmarks() {
        for n in [68, 200, 1201] {
            let basis = make_synthetic_basis(3, n).unwrap();
            assert_eq!(basis.n_vertices(), n);
            assert_eq!(basis.landmark_indices.len(), 68);
            let mut sorted = basis.landmark_indices.clone();
            sorted.sort_unstable();
            sorted.dedup();
            assert_eq!(sorted.len(), 68, "landmark indices must be distinct");
            assert!(basis.landmark_indices.iter().all(|&i| i < n));
        }
    }

    #[test]
    fn basis_columns_are_orthonormal() {
        let basis = make_synthetic_basis(7, 400).unwrap();
        let dim = 3 * basis.n_vertices();
        let check = |data: &[f64], n_cols: usize| {
            for a in 0..n_cols {
                for b in a..n_cols {
                    let dot: f64 = data[a * dim..(a + 1) * dim]
                        .iter()
                        .zip(&data[b * dim..(b + 1) * dim])
                        .map(|(x, y)| x * y)
                        .sum();
                    let expected = if a == b { 1.0 } else { 0.0 };
                    assert!((dot - expected).abs() < 1e-9, "columns {a},{b}: {dot}");
                }
            }
        };
        check(&basis.shape_basis, N_SHAPE);
        check(&basis.expr_basis, N_EXPR);
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let a = make_synthetic_basis(11, 300).unwrap();
        let b = make_synthetic_basis(11, 300).unwrap();
        assert_eq!(a.mean, b.mean);
        assert_eq!(a.shape_basis, b.shape_basis);
        assert_eq!(a.expr_basis, b.expr_basis);
        assert_eq!(a.landmark_indices, b.landmark_indices);
        let c = make_synthetic_basis(12, 300).unwrap();
        assert_ne!(a.shape_basis, c.shape_basis);
    }

    #[test]
    fn mesh_is_forward_facing_half_shell() {
        let basis = make_synthetic_basis(5, 500).unwrap();
        // every vertex lies on the z >= 0 hemisphere of the ellipsoid
        for v in 0..basis.n_vertices() {
            assert!(basis.mean[3 * v + 2] > -1e-9);
        }
        assert!(!basis.triangles.is_empty());
    }
}
