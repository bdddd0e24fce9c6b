//! Shape-prefixed little-endian `f32` array files.
//!
//! Layout: `b"KARR"`, `u32` layout version (1), `u32` rank, `rank` x `u64`
//! dimensions, then `prod(dims)` little-endian `f32` values.

use std::io::Write;
use std::path::Path;

use crate::error::{CoreError, Result};

const MAGIC: &[u8; 4] = b"KARR";
const VERSION: u32 = 1;

pub fn encode_array(shape: &[usize], values: &[f32]) -> Vec<u8> {
    assert_eq!(shape.iter().product::<usize>(), values.len(), "encode_array: shape/value mismatch");
    let mut out = Vec::with_capacity(12 + 8 * shape.len() + 4 * values.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for d in shape {
        out.extend_from_slice(&(*d as u64).to_le_bytes());
    }
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_array(bytes: &[u8]) -> std::result::Result<(Vec<usize>, Vec<f32>), String> {
    let take = |pos: &mut usize, n: usize| -> std::result::Result<&[u8], String> {
        let end = pos.checked_add(n).filter(|e| *e <= bytes.len()).ok_or("truncated array file")?;
        let s = &bytes[*pos..end];
        *pos = end;
        Ok(s)
    };
    let mut pos = 0;
    if take(&mut pos, 4)? != MAGIC {
        return Err("bad magic".into());
    }
    let version = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
    if version != VERSION {
        return Err(format!("array layout version {version}, expected {VERSION}"));
    }
    let rank = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
    if rank > 8 {
        return Err(format!("implausible rank {rank}"));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize);
    }
    let count = shape.iter().try_fold(1usize, |acc, d| acc.checked_mul(*d)).ok_or("shape overflow")?;
    let payload = take(&mut pos, count.checked_mul(4).ok_or("shape overflow")?)?;
    if pos != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - pos));
    }
    let values = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    Ok((shape, values))
}

/// Write `bytes` to `path` through a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp-write");
    {
        let mut f = std::fs::File::create(&tmp).map_err(|e| CoreError::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| CoreError::io(&tmp, e))?;
        f.sync_all().map_err(|e| CoreError::io(&tmp, e))?;
    }
    std::fs::rename(&tmp, path).map_err(|e| CoreError::io(path, e))
}
