//! Single-file checkpoint container: JSON header plus raw little-endian f32
//! parameter blobs, in store order. Round-trips are bit-exact.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};

use crate::error::{Error, Result};

use super::params::ParamStore;

const MAGIC: &[u8; 4] = b"BGCK";
const VERSION: u32 = 1;

pub fn write_store(path: &Path, header: &serde_json::Value, store: &ParamStore) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e: std::io::Error| Error::io(path, e);

    w.write_all(MAGIC).map_err(io_err)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io_err)?;
    let header_bytes = serde_json::to_vec(header)
        .map_err(|e| Error::Checkpoint(format!("header encode: {e}")))?;
    w.write_all(&(header_bytes.len() as u64).to_le_bytes()).map_err(io_err)?;
    w.write_all(&header_bytes).map_err(io_err)?;

    w.write_all(&(store.len() as u32).to_le_bytes()).map_err(io_err)?;
    for id in store.ids() {
        let name = store.name(id).as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes()).map_err(io_err)?;
        w.write_all(name).map_err(io_err)?;
        let value = store.value(id);
        w.write_all(&(value.ndim() as u32).to_le_bytes()).map_err(io_err)?;
        for &d in value.shape() {
            w.write_all(&(d as u64).to_le_bytes()).map_err(io_err)?;
        }
        for &v in value.iter() {
            w.write_all(&v.to_le_bytes()).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}

pub fn read_store(path: &Path) -> Result<(serde_json::Value, Vec<(String, ArrayD<f32>)>)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let io_err = |e: std::io::Error| Error::io(path, e);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io_err)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!("{}: bad magic", path.display())));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf).map_err(io_err)?;
    let version = u32::from_le_bytes(u32buf);
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: unsupported version {version}",
            path.display()
        )));
    }
    let mut u64buf = [0u8; 8];
    r.read_exact(&mut u64buf).map_err(io_err)?;
    let header_len = u64::from_le_bytes(u64buf) as usize;
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes).map_err(io_err)?;
    let header: serde_json::Value = serde_json::from_slice(&header_bytes)
        .map_err(|e| Error::Checkpoint(format!("header decode: {e}")))?;

    r.read_exact(&mut u32buf).map_err(io_err)?;
    let count = u32::from_le_bytes(u32buf) as usize;
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        r.read_exact(&mut u32buf).map_err(io_err)?;
        let name_len = u32::from_le_bytes(u32buf) as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name).map_err(io_err)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Checkpoint("non-utf8 parameter name".into()))?;
        r.read_exact(&mut u32buf).map_err(io_err)?;
        let ndim = u32::from_le_bytes(u32buf) as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            r.read_exact(&mut u64buf).map_err(io_err)?;
            dims.push(u64::from_le_bytes(u64buf) as usize);
        }
        let numel: usize = dims.iter().product();
        let mut data = vec![0f32; numel];
        let mut f32buf = [0u8; 4];
        for v in data.iter_mut() {
            r.read_exact(&mut f32buf).map_err(io_err)?;
            *v = f32::from_le_bytes(f32buf);
        }
        let arr = ArrayD::from_shape_vec(IxDyn(&dims), data)
            .map_err(|e| Error::Checkpoint(format!("bad shape for {name}: {e}")))?;
        params.push((name, arr));
    }
    Ok((header, params))
}

/// Copy loaded values into an architecture-matched store; names and shapes
/// must line up slot for slot.
pub fn fill_store(store: &mut ParamStore, params: &[(String, ArrayD<f32>)]) -> Result<()> {
    if params.len() != store.len() {
        return Err(Error::Checkpoint(format!(
            "parameter count mismatch: file has {}, architecture has {}",
            params.len(),
            store.len()
        )));
    }
    let ids: Vec<_> = store.ids().collect();
    for (id, (name, value)) in ids.into_iter().zip(params) {
        if store.name(id) != name {
            return Err(Error::Checkpoint(format!(
                "parameter name mismatch: file '{name}', architecture '{}'",
                store.name(id)
            )));
        }
        if store.value(id).shape() != value.shape() {
            return Err(Error::Checkpoint(format!(
                "parameter shape mismatch for {name}: file {:?}, architecture {:?}",
                value.shape(),
                store.value(id).shape()
            )));
        }
        store.set_value(id, value.clone());
    }
    Ok(())
}
