//! Painter's-algorithm landmark visibility: a landmark is self-occluded
//! when some mesh triangle covers its 2D projection strictly in front of it
//! (viewer at z = +infinity, orthographic).

use crate::morphable::Mesh;

/// Depth-test margin, relative to the mesh depth extent, so the surface
/// patches around a landmark's own vertex never occlude it.
const DEPTH_MARGIN_FRACTION: f64 = 1e-3;

/// Visibility flags for landmarks given the posed mesh they came from.
/// `landmark_vertices[k]` is landmark k's vertex index (its incident
/// triangles are skipped); `points` holds the interleaved landmark xyz.
pub fn visible_landmarks(mesh: &Mesh, landmark_vertices: &[usize], points: &[f64]) -> Vec<bool> {
    let verts = mesh.vertices();
    let (mut z_min, mut z_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in verts.chunks_exact(3) {
        z_min = z_min.min(v[2]);
        z_max = z_max.max(v[2]);
    }
    let margin = DEPTH_MARGIN_FRACTION * (z_max - z_min).max(1e-12);

    points
        .chunks_exact(3)
        .zip(landmark_vertices)
        .map(|(p, &own_vertex)| {
            !occluded(mesh, own_vertex, [p[0], p[1], p[2]], margin)
        })
        .collect()
}

fn occluded(mesh: &Mesh, own_vertex: usize, p: [f64; 3], margin: f64) -> bool {
    let verts = mesh.vertices();
    let own = own_vertex as u32;
    for tri in mesh.triangles.iter() {
        if tri[0] == own || tri[1] == own || tri[2] == own {
            continue;
        }
        let a = &verts[3 * tri[0] as usize..3 * tri[0] as usize + 3];
        let b = &verts[3 * tri[1] as usize..3 * tri[1] as usize + 3];
        let c = &verts[3 * tri[2] as usize..3 * tri[2] as usize + 3];
        // cheap 2D bbox reject
        if p[0] < a[0].min(b[0]).min(c[0])
            || p[0] > a[0].max(b[0]).max(c[0])
            || p[1] < a[1].min(b[1]).min(c[1])
            || p[1] > a[1].max(b[1]).max(c[1])
        {
            continue;
        }
        // barycentric coordinates in the projected triangle
        let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
        if det.abs() < 1e-18 {
            continue; // edge-on triangle
        }
        let w1 = ((p[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (p[1] - a[1])) / det;
        let w2 = ((b[0] - a[0]) * (p[1] - a[1]) - (p[0] - a[0]) * (b[1] - a[1])) / det;
        let w0 = 1.0 - w1 - w2;
        if w0 < 0.0 || w1 < 0.0 || w2 < 0.0 {
            continue;
        }
        let depth = w0 * a[2] + w1 * b[2] + w2 * c[2];
        if depth > p[2] + margin {
            return true;
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    #[test]
    fn triangle_in_front_occludes_point_behind() {
        // landmark vertex 0 at origin; a big triangle at z = 10 covers it
        let verts = vec![
            0.0, 0.0, 0.0, // v0: the landmark
            -5.0, -5.0, 10.0, // v1
            5.0, -5.0, 10.0, // v2
            0.0, 5.0, 10.0, // v3
        ];
        let mesh = Mesh::new(verts, Arc::new(vec![[1, 2, 3]])).unwrap();
        let vis = visible_landmarks(&mesh, &[0], &[0.0, 0.0, 0.0]);
        assert_eq!(vis, vec![false]);
    }

    #[test]
    fn triangle_behind_does_not_occlude() {
        let verts = vec![
            0.0, 0.0, 0.0, //
            -5.0, -5.0, -10.0, //
            5.0, -5.0, -10.0, //
            0.0, 5.0, -10.0,
        ];
        let mesh = Mesh::new(verts, Arc::new(vec![[1, 2, 3]])).unwrap();
        let vis = visible_landmarks(&mesh, &[0], &[0.0, 0.0, 0.0]);
        assert_eq!(vis, vec![true]);
    }

    #[test]
    fn own_triangles_never_occlude() {
        let verts = vec![
            0.0, 0.0, 0.0, //
            -5.0, -5.0, 10.0, //
            5.0, -5.0, 10.0,
        ];
        // the covering triangle is incident to the landmark vertex itself
        let mesh = Mesh::new(verts, Arc::new(vec![[0, 1, 2]])).unwrap();
        let vis = visible_landmarks(&mesh, &[0], &[0.0, 0.0, 0.0]);
        assert_eq!(vis, vec![true]);
    }
}
