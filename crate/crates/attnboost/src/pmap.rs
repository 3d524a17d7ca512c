//! Diagnostic map dumps.
//!
//! ```text
//! magic   b"PMAP"
//! width   u32 LE
//! height  u32 LE
//! values  f32 LE * width * height, row-major
//! ```

use std::path::Path;

use attnboost_core::Grid;

use crate::error::FormatError;

pub const MAGIC: &[u8; 4] = b"PMAP";

pub fn encode(map: &Grid<f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * map.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(map.width() as u32).to_le_bytes());
    out.extend_from_slice(&(map.height() as u32).to_le_bytes());
    for &v in map.as_slice() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Grid<f32>, FormatError> {
    if bytes.len() < 12 {
        return Err(FormatError::Truncated);
    }
    if &bytes[..4] != MAGIC {
        return Err(FormatError::BadMagic("PMAP"));
    }
    let w = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let h = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = &bytes[12..];
    if body.len() != 4 * w * h {
        return Err(FormatError::Invalid(format!(
            "{w}x{h} map needs {} value bytes, found {}",
            4 * w * h,
            body.len()
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Grid::from_vec(w, h, data)?)
}

pub fn save(path: &Path, map: &Grid<f64>) -> Result<(), FormatError> {
    std::fs::write(path, encode(map))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Grid<f32>, FormatError> {
    decode(&std::fs::read(path)?)
}
