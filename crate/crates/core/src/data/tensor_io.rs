//! The `EDT1` dense tensor format.
//!
//! Layout, all integers little-endian:
//!
//! | offset | size      | field                       |
//! |--------|-----------|-----------------------------|
//! | 0      | 4         | magic `b"EDT1"`             |
//! | 4      | 4         | version, u32 = 1            |
//! | 8      | 1         | dtype code, 1 = real32      |
//! | 9      | 4         | ndim, u32 = 2               |
//! | 13     | 8 * ndim  | dims, u64 each              |
//! | 29     | 4 * rows * cols | row-major f32 payload |

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2};

use super::matrix::first_non_finite;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"EDT1";
pub const VERSION: u32 = 1;
pub const DTYPE_REAL32: u8 = 1;
/// Header size of a two-dimensional tensor.
pub const HEADER_LEN: usize = 4 + 4 + 1 + 4 + 2 * 8;

pub fn load_tensor(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    BufReader::new(file)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    read_tensor(&bytes).map_err(|e| match e {
        Error::Corrupt { reason, .. } => Error::Corrupt {
            path: path.to_path_buf(),
            reason,
        },
        other => other,
    })
}

fn corrupt(reason: impl Into<String>) -> Error {
    Error::Corrupt {
        path: "<memory>".into(),
        reason: reason.into(),
    }
}

fn take<'a>(bytes: &'a [u8], pos: &mut usize, n: usize) -> Result<&'a [u8]> {
    let end = pos
        .checked_add(n)
        .filter(|e| *e <= bytes.len())
        .ok_or_else(|| corrupt(format!("truncated header at byte {}", *pos)))?;
    let s = &bytes[*pos..end];
    *pos = end;
    Ok(s)
}

/// Decodes an `EDT1` byte buffer.
pub fn read_tensor(bytes: &[u8]) -> Result<Array2<f64>> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::Format("missing EDT1 magic bytes".into()));
    }
    let mut pos = 4;
    let version = u32::from_le_bytes(take(bytes, &mut pos, 4)?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let dtype = take(bytes, &mut pos, 1)?[0];
    if dtype != DTYPE_REAL32 {
        return Err(Error::Format(format!("unsupported dtype code {dtype}")));
    }
    let ndim = u32::from_le_bytes(take(bytes, &mut pos, 4)?.try_into().unwrap());
    if ndim != 2 {
        return Err(Error::Format(format!(
            "expected 2 dimensions, found {ndim}"
        )));
    }
    let mut dims = [0usize; 2];
    for d in dims.iter_mut() {
        let raw = u64::from_le_bytes(take(bytes, &mut pos, 8)?.try_into().unwrap());
        *d = usize::try_from(raw).map_err(|_| corrupt(format!("dimension {raw} too large")))?;
    }
    let [rows, cols] = dims;
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| corrupt(format!("shape {rows}x{cols} overflows")))?;
    let payload = &bytes[pos..];
    if payload.len() != expected {
        return Err(corrupt(format!(
            "header declares {rows}x{cols} ({expected} payload bytes) but file has {}",
            payload.len()
        )));
    }
    let values: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Data(format!(
            "non-finite value {} at flat index {i} (row {}, column {})",
            values[i],
            i / cols,
            i % cols
        )));
    }
    Ok(Array2::from_shape_vec((rows, cols), values).expect("length checked"))
}

/// Encodes a matrix as `EDT1`. Values are narrowed to f32.
pub fn write_tensor<W: Write>(matrix: &ArrayView2<f64>, mut out: W) -> Result<W> {
    if let Some((r, c, v)) = first_non_finite(matrix) {
        return Err(Error::Data(format!(
            "cannot save non-finite value {v} at row {r}, column {c}"
        )));
    }
    let io = |e| Error::io("<writer>", e);
    out.write_all(MAGIC).map_err(io)?;
    out.write_all(&VERSION.to_le_bytes()).map_err(io)?;
    out.write_all(&[DTYPE_REAL32]).map_err(io)?;
    out.write_all(&2u32.to_le_bytes()).map_err(io)?;
    out.write_all(&(matrix.nrows() as u64).to_le_bytes())
        .map_err(io)?;
    out.write_all(&(matrix.ncols() as u64).to_le_bytes())
        .map_err(io)?;
    for (i, &v) in matrix.iter().enumerate() {
        let narrowed = v as f32;
        if !narrowed.is_finite() {
            return Err(Error::Data(format!(
                "value {v} at flat index {i} overflows real32"
            )));
        }
        out.write_all(&narrowed.to_le_bytes()).map_err(io)?;
    }
    Ok(out)
}

pub fn save_tensor(matrix: &ArrayView2<f64>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    // encode fully before touching the file so a data error leaves no partial output
    let bytes = write_tensor(matrix, Vec::with_capacity(HEADER_LEN + matrix.len() * 4))?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}
