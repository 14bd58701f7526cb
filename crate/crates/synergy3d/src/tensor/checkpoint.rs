//! Checkpoint file, little-endian.
//!
//! Layout: magic `SYNCKPT1`; u32 tensor count; per tensor: u32 name length,
//! UTF-8 name, u32 rank, u64 dims, f32 data. Followed by the optimizer state
//! (momentum buffers of the trainable entries) in the same layout.

use super::{ParamStore, SgdMomentum};
use crate::error::{Error, Result};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SYNCKPT1";

fn write_tensor<W: Write>(w: &mut W, name: &str, shape: &[usize], data: &[f64]) -> Result<()> {
    w.write_u32::<LittleEndian>(name.len() as u32)?;
    w.write_all(name.as_bytes())?;
    w.write_u32::<LittleEndian>(shape.len() as u32)?;
    for &d in shape {
        w.write_u64::<LittleEndian>(d as u64)?;
    }
    for &v in data {
        w.write_f32::<LittleEndian>(v as f32)?;
    }
    Ok(())
}

fn read_tensor<R: Read>(r: &mut R, path: &str) -> Result<(String, Vec<usize>, Vec<f64>)> {
    let name_len = r.read_u32::<LittleEndian>()? as usize;
    let mut name_buf = vec![0u8; name_len];
    r.read_exact(&mut name_buf)?;
    let name = String::from_utf8(name_buf).map_err(|e| Error::Format {
        path: path.to_string(),
        detail: format!("tensor name is not UTF-8: {e}"),
    })?;
    let rank = r.read_u32::<LittleEndian>()? as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(r.read_u64::<LittleEndian>()? as usize);
    }
    let numel: usize = shape.iter().product();
    let mut data32 = vec![0.0f32; numel];
    r.read_f32_into::<LittleEndian>(&mut data32)?;
    Ok((name, shape, data32.into_iter().map(f64::from).collect()))
}

/// Serializes every store entry plus the optimizer momentum state.
pub fn write_checkpoint<W: Write>(store: &ParamStore, w: &mut W) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_u32::<LittleEndian>(store.len() as u32)?;
    for (_, p) in store.iter() {
        write_tensor(w, &p.name, &p.shape, &p.value)?;
    }
    let trainable: Vec<_> = store.iter().filter(|(_, p)| p.trainable).collect();
    w.write_u32::<LittleEndian>(trainable.len() as u32)?;
    for (_, p) in trainable {
        write_tensor(w, &p.name, &p.shape, &p.velocity)?;
    }
    Ok(())
}

pub fn save_checkpoint(store: &ParamStore, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    write_checkpoint(store, &mut w)?;
    w.flush()?;
    Ok(())
}

/// Restores values and momentum into a store with identical registrations.
///
/// Every tensor in the file must exist in the store with a matching shape,
/// and every store entry must be covered.
pub fn read_checkpoint<R: Read>(store: &mut ParamStore, r: &mut R, path: &str) -> Result<()> {
    let fail = |detail: String| Error::Format {
        path: path.to_string(),
        detail,
    };
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(fail(format!("bad magic {magic:?}")));
    }
    let count = r.read_u32::<LittleEndian>()? as usize;
    if count != store.len() {
        return Err(fail(format!(
            "checkpoint holds {count} tensors, model expects {}",
            store.len()
        )));
    }
    let mut seen = vec![false; store.len()];
    for _ in 0..count {
        let (name, shape, data) = read_tensor(r, path)?;
        let id = store
            .id_of(&name)
            .ok_or_else(|| Error::MissingTensor(name.clone()))?;
        if store.get(id).shape != shape {
            return Err(fail(format!(
                "tensor '{name}' has shape {shape:?}, model expects {:?}",
                store.get(id).shape
            )));
        }
        store.set_value(id, data)?;
        seen[id.0] = true;
    }
    if let Some((_, p)) = store.iter().find(|(id, _)| !seen[id.0]) {
        return Err(Error::MissingTensor(p.name.clone()));
    }
    let opt_count = r.read_u32::<LittleEndian>()? as usize;
    for _ in 0..opt_count {
        let (name, shape, data) = read_tensor(r, path)?;
        let id = store
            .id_of(&name)
            .ok_or_else(|| Error::MissingTensor(name.clone()))?;
        if store.get(id).shape != shape {
            return Err(fail(format!("momentum tensor '{name}' has wrong shape")));
        }
        let entry = &mut store.entries_mut()[id.0];
        if !entry.trainable {
            return Err(fail(format!("momentum recorded for non-trainable '{name}'")));
        }
        entry.velocity = data;
    }
    Ok(())
}

pub fn load_checkpoint(store: &mut ParamStore, path: &Path) -> Result<()> {
    let file = std::fs::File::open(path)?;
    let mut r = BufReader::new(file);
    read_checkpoint(store, &mut r, &path.display().to_string())
}

/// Convenience: checkpoint bytes in memory.
pub fn checkpoint_to_vec(store: &ParamStore) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_checkpoint(store, &mut buf)?;
    Ok(buf)
}

impl SgdMomentum {
    /// Quantizes parameter values to f32 in place, matching what a
    /// checkpoint save/load cycle would produce.
    pub fn quantize_to_f32(store: &mut ParamStore) {
        for entry in store.entries_mut() {
            let value = Arc::make_mut(&mut entry.value);
            for v in value.iter_mut() {
                *v = *v as f32 as f64;
            }
            for v in entry.velocity.iter_mut() {
                *v = *v as f32 as f64;
            }
        }
    }
}
