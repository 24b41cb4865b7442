//! HMAP1 binary grid format.
//!
//! ```text
//! magic     4 bytes  "HMAP" (0x48 0x4D 0x41 0x50)
//! version   u16 LE   = 1
//! rows      u32 LE
//! cols      u32 LE
//! cell_size f32 LE
//! heights   rows * cols f32 LE, row-major
//! ```
//!
//! Values are stored as `f32`; grids whose values are exactly representable
//! in `f32` round-trip bit for bit.

use std::path::Path;

use crate::error::{Error, Result};
use crate::heightmap::Grid;

pub const MAGIC: [u8; 4] = *b"HMAP";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 4 + 2 + 4 + 4 + 4;

pub fn encode(grid: &Grid) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * grid.values().len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(grid.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(grid.cols() as u32).to_le_bytes());
    out.extend_from_slice(&(grid.cell_size() as f32).to_le_bytes());
    for &v in grid.values() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Grid> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!("HMAP1 header truncated ({} bytes)", bytes.len())));
    }
    if bytes[0..4] != MAGIC {
        return Err(Error::Format("bad HMAP magic".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported HMAP version {version}")));
    }
    let rows = u32_at(6) as usize;
    let cols = u32_at(10) as usize;
    let cell = f32::from_le_bytes(bytes[14..18].try_into().unwrap());
    let n = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::Format("HMAP dimensions overflow".into()))?;
    let expected = HEADER_LEN + 4 * n;
    if bytes.len() != expected {
        return Err(Error::Format(format!("HMAP payload is {} bytes, expected {expected}", bytes.len())));
    }
    let values = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Grid::from_values(rows, cols, cell as f64, values).map_err(|e| Error::Format(e.to_string()))
}

/// Rounds every value (and the cell size) to the nearest `f32`, i.e. what a
/// reader of the encoded bytes will see.
pub fn quantize(grid: &Grid) -> Grid {
    let values = grid.values().iter().map(|&v| v as f32 as f64).collect();
    Grid::from_values(grid.rows(), grid.cols(), grid.cell_size() as f32 as f64, values)
        .expect("quantized grid keeps its geometry")
}

pub fn write_file(path: &Path, grid: &Grid) -> Result<()> {
    std::fs::write(path, encode(grid)).map_err(Error::io_at(path))
}

pub fn read_file(path: &Path) -> Result<Grid> {
    let bytes = std::fs::read(path).map_err(Error::io_at(path))?;
    decode(&bytes)
}
