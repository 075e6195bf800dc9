//! SFIM tensor files.
//!
//! Layout, all little-endian: magic `SFIM`, u16 version (1), u8 dtype (1 = f32),
//! u8 ndim, `ndim` u32 dims, then the f32 payload in row-major order.

use std::fs;
use std::path::Path;

use satfusion_core::{Shape, Tensor};

use crate::error::{IoError, Result};

pub const MAGIC: &[u8; 4] = b"SFIM";
pub const VERSION: u16 = 1;
pub const DTYPE_F32: u8 = 1;

/// Header bytes for a tensor of the given dims.
pub fn header(dims: &[usize]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * dims.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(DTYPE_F32);
    out.push(dims.len() as u8);
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out
}

pub fn encode(t: &Tensor<f32>) -> Vec<u8> {
    let mut out = header(t.dims());
    out.reserve(4 * t.len());
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parses SFIM bytes; `path` only labels errors.
pub fn decode(bytes: &[u8], path: &Path) -> Result<Tensor<f32>> {
    let bad = |msg: String| IoError::format(path, msg);
    if bytes.len() < 8 {
        return Err(bad(format!("truncated header ({} bytes)", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(bad(format!("bad magic {:?}", String::from_utf8_lossy(&bytes[..4]))));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    if bytes[6] != DTYPE_F32 {
        return Err(bad(format!("unsupported dtype {}", bytes[6])));
    }
    let ndim = bytes[7] as usize;
    let body = 8 + 4 * ndim;
    if bytes.len() < body {
        return Err(bad(String::from("truncated dims")));
    }
    let dims: Vec<usize> =
        bytes[8..body].chunks_exact(4).map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize).collect();
    let shape = Shape::new(&dims).map_err(|e| bad(e.to_string()))?;
    let expected = shape.numel().checked_mul(4).ok_or_else(|| bad(String::from("dims overflow")))?;
    let payload = &bytes[body..];
    if payload.len() != expected {
        return Err(bad(format!("payload has {} bytes, dims {dims:?} need {expected}", payload.len())));
    }
    let data = payload.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    Tensor::from_vec(shape, data).map_err(|e| bad(e.to_string()))
}

pub fn write_tensor(t: &Tensor<f32>, path: &Path) -> Result<()> {
    fs::write(path, encode(t)).map_err(|e| IoError::io(path, e))
}

pub fn read_tensor(path: &Path) -> Result<Tensor<f32>> {
    let bytes = fs::read(path).map_err(|e| IoError::io(path, e))?;
    decode(&bytes, path)
}
