//! The `<name>.json` + `<name>.raw` container: a JSON header describing
//! shape and dtype, next to a raw little-endian binary blob.
//!
//! All floating-point payloads are stored as f32; computation upstream is
//! f64. Integer rasters (segmentations, label maps) use u32/u16.

use crate::error::{GrnnError, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use std::fs;
use std::path::{Path, PathBuf};

/// Path of the raw blob belonging to a header path: same stem, `.raw`.
pub fn raw_path(header_path: &Path) -> PathBuf {
    header_path.with_extension("raw")
}

pub fn read_header<H: DeserializeOwned>(header_path: &Path) -> Result<H> {
    let text = fs::read_to_string(header_path)
        .map_err(|e| GrnnError::io(header_path, e))?;
    serde_json::from_str(&text).map_err(|e| GrnnError::BadHeader {
        path: header_path.to_path_buf(),
        reason: e.to_string(),
    })
}

pub fn write_header<H: Serialize>(header_path: &Path, header: &H) -> Result<()> {
    let mut text = serde_json::to_string_pretty(header).map_err(|e| GrnnError::BadHeader {
        path: header_path.to_path_buf(),
        reason: e.to_string(),
    })?;
    text.push('\n');
    fs::write(header_path, text).map_err(|e| GrnnError::io(header_path, e))
}

/// Read the raw blob as little-endian f32, widened to f64.
pub fn read_raw_f32(header_path: &Path, expected_len: usize) -> Result<Vec<f64>> {
    let path = raw_path(header_path);
    let bytes = fs::read(&path).map_err(|e| GrnnError::io(&path, e))?;
    if bytes.len() != expected_len * 4 {
        return Err(GrnnError::SizeMismatch {
            path,
            expected: (expected_len * 4) as u64,
            found: bytes.len() as u64,
        });
    }
    let mut out = Vec::with_capacity(expected_len);
    for chunk in bytes.chunks_exact(4) {
        out.push(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]) as f64);
    }
    Ok(out)
}

/// Write values as little-endian f32 next to the header path.
pub fn write_raw_f32(header_path: &Path, values: &[f64]) -> Result<()> {
    let path = raw_path(header_path);
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for &v in values {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(&path, bytes).map_err(|e| GrnnError::io(&path, e))
}

pub fn read_raw_u32(header_path: &Path, expected_len: usize) -> Result<Vec<u32>> {
    let path = raw_path(header_path);
    let bytes = fs::read(&path).map_err(|e| GrnnError::io(&path, e))?;
    if bytes.len() != expected_len * 4 {
        return Err(GrnnError::SizeMismatch {
            path,
            expected: (expected_len * 4) as u64,
            found: bytes.len() as u64,
        });
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub fn write_raw_u32(header_path: &Path, values: &[u32]) -> Result<()> {
    let path = raw_path(header_path);
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for &v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(&path, bytes).map_err(|e| GrnnError::io(&path, e))
}
