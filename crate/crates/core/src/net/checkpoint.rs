//! Versioned binary checkpoints: magic, format version, a JSON
//! architecture descriptor, then little-endian f32 parameter arrays in
//! layer order. Parameters are quantized to f32 on save, so a loaded
//! network re-saves byte-identically.

use std::fs;
use std::path::Path;

use super::{ClassifierNet, LayerParams, NetSpec};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TFRG";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn save_checkpoint(path: &Path, net: &ClassifierNet) -> Result<()> {
    let arch = serde_json::to_vec(net.spec())
        .map_err(|e| Error::Format(format!("architecture encode failed: {e}")))?;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(arch.len() as u32).to_le_bytes());
    out.extend_from_slice(&arch);
    for layer in net.params() {
        write_array(&mut out, &layer.w);
        write_array(&mut out, &layer.b);
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ClassifierNet> {
    let bytes = fs::read(path)?;
    let mut pos = 0usize;
    let magic = take(&bytes, &mut pos, 4)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!(
            "bad checkpoint magic {:?} in {}",
            magic,
            path.display()
        )));
    }
    let version = read_u32(&bytes, &mut pos)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let arch_len = read_u32(&bytes, &mut pos)? as usize;
    let arch = take(&bytes, &mut pos, arch_len)?;
    let spec: NetSpec = serde_json::from_slice(arch)
        .map_err(|e| Error::Format(format!("architecture decode failed: {e}")))?;
    let mut params = Vec::with_capacity(spec.layers.len());
    for _ in 0..spec.layers.len() {
        let w = read_array(&bytes, &mut pos)?;
        let b = read_array(&bytes, &mut pos)?;
        params.push(LayerParams { w, b });
    }
    if pos != bytes.len() {
        return Err(Error::Format("trailing bytes after checkpoint payload".into()));
    }
    ClassifierNet::from_parts(spec, params)
}

fn write_array(out: &mut Vec<u8>, values: &[f64]) {
    out.extend_from_slice(&(values.len() as u32).to_le_bytes());
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

fn read_array(bytes: &[u8], pos: &mut usize) -> Result<Vec<f64>> {
    let len = read_u32(bytes, pos)? as usize;
    let raw = take(bytes, pos, len * 4)?;
    Ok(raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

fn read_u32(bytes: &[u8], pos: &mut usize) -> Result<u32> {
    let raw = take(bytes, pos, 4)?;
    Ok(u32::from_le_bytes([raw[0], raw[1], raw[2], raw[3]]))
}

fn take<'a>(bytes: &'a [u8], pos: &mut usize, n: usize) -> Result<&'a [u8]> {
    if *pos + n > bytes.len() {
        return Err(Error::Format("truncated checkpoint".into()));
    }
    let slice = &bytes[*pos..*pos + n];
    *pos += n;
    Ok(slice)
}
