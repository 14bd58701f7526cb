//! Wavefront OBJ export/import for meshes.
//!
//! Vertices are printed with 17 significant digits so the text round trip
//! reproduces every f64 bit-exactly. Faces are 1-indexed.

use super::Mesh;
use crate::error::{Error, Result};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

pub fn write_obj(mesh: &Mesh, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    write_obj_to(mesh, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn write_obj_to<W: Write>(mesh: &Mesh, w: &mut W) -> Result<()> {
    for i in 0..mesh.n_vertices() {
        let v = mesh.vertex(i);
        writeln!(w, "v {:.16e} {:.16e} {:.16e}", v[0], v[1], v[2])?;
    }
    for tri in mesh.triangles.iter() {
        writeln!(w, "f {} {} {}", tri[0] + 1, tri[1] + 1, tri[2] + 1)?;
    }
    Ok(())
}

pub fn read_obj(path: &Path) -> Result<Mesh> {
    let file = std::fs::File::open(path)?;
    read_obj_from(BufReader::new(file), &path.display().to_string())
}

pub fn read_obj_from<R: BufRead>(reader: R, path: &str) -> Result<Mesh> {
    let fail = |line_no: usize, detail: String| Error::Format {
        path: path.to_string(),
        detail: format!("line {line_no}: {detail}"),
    };
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for (line_no, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = line_no + 1;
        let mut fields = line.split_whitespace();
        match fields.next() {
            Some("v") => {
                for _ in 0..3 {
                    let tok = fields
                        .next()
                        .ok_or_else(|| fail(line_no, "vertex needs 3 coordinates".into()))?;
                    let val: f64 = tok
                        .parse()
                        .map_err(|e| fail(line_no, format!("bad coordinate '{tok}': {e}")))?;
                    vertices.push(val);
                }
            }
            Some("f") => {
                let mut tri = [0u32; 3];
                for slot in tri.iter_mut() {
                    let tok = fields
                        .next()
                        .ok_or_else(|| fail(line_no, "face needs 3 indices".into()))?;
                    // Accept "i", "i/..", "i//.." forms.
                    let head = tok.split('/').next().unwrap_or(tok);
                    let idx: u32 = head
                        .parse()
                        .map_err(|e| fail(line_no, format!("bad face index '{tok}': {e}")))?;
                    if idx == 0 {
                        return Err(fail(line_no, "face indices are 1-based".into()));
                    }
                    *slot = idx - 1;
                }
                triangles.push(tri);
            }
            _ => {} // comments, normals, etc.
        }
    }
    Mesh::new(vertices, Arc::new(triangles))
}
