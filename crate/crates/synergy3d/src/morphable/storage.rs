//! Binary basis file, little-endian.
//!
//! Layout: magic `SYN3DMM1`; u32 N_v; u32 n_shape (=40); u32 n_expr (=10);
//! u32 N_l; f64 mean[3*N_v]; f64 U_s column-major; f64 U_e column-major;
//! u32 landmark_indices[N_l]; u32 n_tri; u32 triangles[3*n_tri].

use super::{FaceBasis, N_EXPR, N_SHAPE};
use crate::error::{Error, Result};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const BASIS_MAGIC: &[u8; 8] = b"SYN3DMM1";

pub fn write_basis(basis: &FaceBasis, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    write_basis_to(basis, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn write_basis_to<W: Write>(basis: &FaceBasis, w: &mut W) -> Result<()> {
    w.write_all(BASIS_MAGIC)?;
    w.write_u32::<LittleEndian>(basis.n_vertices() as u32)?;
    w.write_u32::<LittleEndian>(N_SHAPE as u32)?;
    w.write_u32::<LittleEndian>(N_EXPR as u32)?;
    w.write_u32::<LittleEndian>(basis.landmark_indices.len() as u32)?;
    for &v in &basis.mean {
        w.write_f64::<LittleEndian>(v)?;
    }
    for &v in &basis.shape_basis {
        w.write_f64::<LittleEndian>(v)?;
    }
    for &v in &basis.expr_basis {
        w.write_f64::<LittleEndian>(v)?;
    }
    for &idx in &basis.landmark_indices {
        w.write_u32::<LittleEndian>(idx as u32)?;
    }
    w.write_u32::<LittleEndian>(basis.triangles.len() as u32)?;
    for tri in basis.triangles.iter() {
        for &v in tri {
            w.write_u32::<LittleEndian>(v)?;
        }
    }
    Ok(())
}

pub fn read_basis(path: &Path) -> Result<FaceBasis> {
    let file = std::fs::File::open(path)?;
    let mut r = BufReader::new(file);
    read_basis_from(&mut r, &path.display().to_string())
}

pub fn read_basis_from<R: Read>(r: &mut R, path: &str) -> Result<FaceBasis> {
    let fail = |detail: String| Error::Format {
        path: path.to_string(),
        detail,
    };
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != BASIS_MAGIC {
        return Err(fail(format!("bad magic {magic:?}")));
    }
    let n_vertices = r.read_u32::<LittleEndian>()? as usize;
    let n_shape = r.read_u32::<LittleEndian>()? as usize;
    let n_expr = r.read_u32::<LittleEndian>()? as usize;
    if n_shape != N_SHAPE || n_expr != N_EXPR {
        return Err(fail(format!(
            "basis declares {n_shape} shape / {n_expr} expression modes, expected {N_SHAPE}/{N_EXPR}"
        )));
    }
    let n_landmarks = r.read_u32::<LittleEndian>()? as usize;
    let dim = 3 * n_vertices;
    let mut mean = vec![0.0; dim];
    r.read_f64_into::<LittleEndian>(&mut mean)?;
    let mut shape_basis = vec![0.0; dim * N_SHAPE];
    r.read_f64_into::<LittleEndian>(&mut shape_basis)?;
    let mut expr_basis = vec![0.0; dim * N_EXPR];
    r.read_f64_into::<LittleEndian>(&mut expr_basis)?;
    let mut landmark_indices = vec![0u32; n_landmarks];
    r.read_u32_into::<LittleEndian>(&mut landmark_indices)?;
    let n_tri = r.read_u32::<LittleEndian>()? as usize;
    let mut tri_flat = vec![0u32; 3 * n_tri];
    r.read_u32_into::<LittleEndian>(&mut tri_flat)?;
    let triangles: Vec<[u32; 3]> = tri_flat
        .chunks_exact(3)
        .map(|c| [c[0], c[1], c[2]])
        .collect();
    FaceBasis::new(
        n_vertices,
        mean,
        shape_basis,
        expr_basis,
        landmark_indices.into_iter().map(|v| v as usize).collect(),
        triangles,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn basis_round_trips_bit_exactly() {
        let mut rng = ChaCha12Rng::seed_from_u64(21);
        let n = 25;
        let dim = 3 * n;
        let basis = FaceBasis::new(
            n,
            (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
            (0..dim * N_SHAPE).map(|_| rng.random_range(-1.0..1.0)).collect(),
            (0..dim * N_EXPR).map(|_| rng.random_range(-1.0..1.0)).collect(),
            vec![0, 3, 24],
            vec![[0, 1, 2], [2, 3, 4]],
        )
        .unwrap();
        let mut buf = Vec::new();
        write_basis_to(&basis, &mut buf).unwrap();
        let back = read_basis_from(&mut buf.as_slice(), "mem").unwrap();
        assert_eq!(back.n_vertices(), n);
        assert_eq!(back.mean, basis.mean);
        assert_eq!(back.shape_basis, basis.shape_basis);
        assert_eq!(back.expr_basis, basis.expr_basis);
        assert_eq!(back.landmark_indices, basis.landmark_indices);
        assert_eq!(*back.triangles, *basis.triangles);
    }

    #[test]
    fn wrong_mode_count_rejected() {
        let mut buf = Vec::new();
        buf.extend_from_slice(BASIS_MAGIC);
        buf.extend_from_slice(&5u32.to_le_bytes());
        buf.extend_from_slice(&39u32.to_le_bytes());
        buf.extend_from_slice(&10u32.to_le_bytes());
        buf.extend_from_slice(&0u32.to_le_bytes());
        assert!(read_basis_from(&mut buf.as_slice(), "mem").is_err());
    }
}
