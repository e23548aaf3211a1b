//! `WSF1` binary feature files.
//!
//! Layout (all little-endian): magic `b"WSF1"`, `T: u32`, `d: u32`, then
//! `T·d` `f32` values row-major. Values are widened to `f64` on load.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const FEATURE_MAGIC: [u8; 4] = *b"WSF1";
const HEADER_LEN: usize = 12;

pub fn encode_features(features: &Matrix) -> Result<Vec<u8>> {
    let rows = u32::try_from(features.rows())
        .map_err(|_| Error::InvalidArgument("too many rows for WSF1".into()))?;
    let cols = u32::try_from(features.cols())
        .map_err(|_| Error::InvalidArgument("too many columns for WSF1".into()))?;
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * features.data().len());
    out.extend_from_slice(&FEATURE_MAGIC);
    out.extend_from_slice(&rows.to_le_bytes());
    out.extend_from_slice(&cols.to_le_bytes());
    for &v in features.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

/// Decodes a `WSF1` buffer; `path` is only used in diagnostics.
pub fn decode_features(bytes: &[u8], path: &Path) -> Result<Matrix> {
    if bytes.len() < HEADER_LEN {
        if bytes.len() >= 4 && bytes[..4] != FEATURE_MAGIC {
            return Err(bad_magic(bytes, path));
        }
        return Err(Error::Length {
            path: path.to_path_buf(),
            expected: HEADER_LEN as u64,
            actual: bytes.len() as u64,
        });
    }
    if bytes[..4] != FEATURE_MAGIC {
        return Err(bad_magic(bytes, path));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let expected = HEADER_LEN as u64 + 4 * rows as u64 * cols as u64;
    if bytes.len() as u64 != expected {
        return Err(Error::Length {
            path: path.to_path_buf(),
            expected,
            actual: bytes.len() as u64,
        });
    }
    if rows == 0 {
        return Err(Error::EmptyFeatures {
            path: path.to_path_buf(),
            what: "segments",
        });
    }
    if cols == 0 {
        return Err(Error::EmptyFeatures {
            path: path.to_path_buf(),
            what: "feature dimension",
        });
    }
    let mut data = Vec::with_capacity(rows * cols);
    for (i, chunk) in bytes[HEADER_LEN..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        if !v.is_finite() {
            return Err(Error::NonFiniteFeature {
                path: path.to_path_buf(),
                row: i / cols,
                col: i % cols,
            });
        }
        data.push(f64::from(v));
    }
    Matrix::from_vec(rows, cols, data)
}

fn bad_magic(bytes: &[u8], path: &Path) -> Error {
    Error::BadMagic {
        path: path.to_path_buf(),
        expected: FEATURE_MAGIC,
        found: bytes[..4.min(bytes.len())].to_vec(),
    }
}

pub fn load_features(path: impl AsRef<Path>) -> Result<Matrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_features(&bytes, path)
}

pub fn write_features(path: impl AsRef<Path>, features: &Matrix) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_features(features)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
