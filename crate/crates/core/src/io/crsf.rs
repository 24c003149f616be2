//! CRSF binary matrix files.
//!
//! Layout: `b"CRSF"`, u32 version (1), u32 rows, u32 columns, then
//! `rows * columns` little-endian f32 values in row-major order.

use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CRSF";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

/// A row-major f32 matrix as stored in a CRSF file.
#[derive(Debug, Clone, PartialEq)]
pub struct CrsfMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

pub fn encode_crsf(rows: usize, cols: usize, data: &[f32]) -> Result<Vec<u8>> {
    if data.len() != rows * cols {
        return Err(Error::param(format!(
            "matrix data has {} values, expected {rows}x{cols}",
            data.len()
        )));
    }
    let to_u32 = |v: usize| {
        u32::try_from(v).map_err(|_| Error::param(format!("dimension {v} exceeds u32")))
    };
    let mut out = Vec::with_capacity(HEADER_LEN + data.len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&to_u32(rows)?.to_le_bytes());
    out.extend_from_slice(&to_u32(cols)?.to_le_bytes());
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Decodes a CRSF buffer. Non-finite values are rejected.
pub fn decode_crsf(bytes: &[u8]) -> Result<CrsfMatrix> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::FeatureMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::FeatureTruncated {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let word = |k: usize| u32::from_le_bytes(bytes[k..k + 4].try_into().unwrap());
    let version = word(4);
    if version != VERSION {
        return Err(Error::FeatureVersion(version));
    }
    let rows = word(8) as usize;
    let cols = word(12) as usize;
    let expected = rows * cols * 4;
    let body = &bytes[HEADER_LEN..];
    if body.len() != expected {
        return Err(Error::FeatureTruncated {
            expected,
            found: body.len(),
        });
    }
    let data: Vec<f32> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if let Some(k) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteFeature { row: k / cols.max(1) });
    }
    Ok(CrsfMatrix { rows, cols, data })
}

pub fn read_crsf(path: &Path) -> Result<CrsfMatrix> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_crsf(&bytes)
}

pub fn write_crsf(path: &Path, rows: usize, cols: usize, data: &[f32]) -> Result<()> {
    let bytes = encode_crsf(rows, cols, data)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
