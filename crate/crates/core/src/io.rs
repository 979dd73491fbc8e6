//! Bit-exact file I/O for volumes and masks.
//!
//! A stored grid is a pair of files: a JSON header
//! `{"dims":[nz,ny,nx],"spacing":[dz,dy,dx],"dtype":"f32le","payload":"name.raw"}`
//! and a raw payload of little-endian values in z-major/x-fastest order.
//! Volumes use dtype `f32le`; masks use dtype `u8` with values 0/1. The
//! payload path is relative to the header's directory.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{BinaryMask3, Volume3};

pub const DTYPE_F32LE: &str = "f32le";
pub const DTYPE_U8: &str = "u8";

#[derive(Debug, Serialize, Deserialize)]
struct GridHeader {
    dims: [usize; 3],
    spacing: [f64; 3],
    dtype: String,
    payload: String,
}

fn read_header(path: &Path) -> Result<GridHeader> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::HeaderParse {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

fn payload_path(header_path: &Path, payload: &str) -> PathBuf {
    header_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(payload)
}

fn payload_name(header_path: &Path) -> String {
    let stem = header_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "grid".to_string());
    format!("{stem}.raw")
}

/// Writes `bytes` to `path` atomically (temp file in the same directory,
/// then rename).
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp-write");
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume3> {
    let path = path.as_ref();
    let header = read_header(path)?;
    if header.dtype != DTYPE_F32LE {
        return Err(Error::UnsupportedDtype {
            path: path.to_path_buf(),
            expected: DTYPE_F32LE,
            found: header.dtype,
        });
    }
    let raw_path = payload_path(path, &header.payload);
    let bytes = fs::read(&raw_path).map_err(|e| Error::io(&raw_path, e))?;
    let n = header.dims[0] * header.dims[1] * header.dims[2];
    if bytes.len() != n * 4 {
        return Err(Error::LengthMismatch {
            path: raw_path,
            expected: n * 4,
            found: bytes.len(),
        });
    }
    let data: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Volume3::new(
        (header.dims[0], header.dims[1], header.dims[2]),
        (header.spacing[0], header.spacing[1], header.spacing[2]),
        data,
    )
}

pub fn write_volume(volume: &Volume3, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let payload = payload_name(path);
    let (nz, ny, nx) = volume.dims();
    let (dz, dy, dx) = volume.spacing();
    let header = GridHeader {
        dims: [nz, ny, nx],
        spacing: [dz, dy, dx],
        dtype: DTYPE_F32LE.to_string(),
        payload: payload.clone(),
    };
    let mut bytes = Vec::with_capacity(volume.len() * 4);
    for v in volume.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_atomic(&payload_path(path, &payload), &bytes)?;
    let text = serde_json::to_string_pretty(&header).expect("header serializes");
    write_atomic(path, text.as_bytes())
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<BinaryMask3> {
    let path = path.as_ref();
    let header = read_header(path)?;
    if header.dtype != DTYPE_U8 {
        return Err(Error::UnsupportedDtype {
            path: path.to_path_buf(),
            expected: DTYPE_U8,
            found: header.dtype,
        });
    }
    let raw_path = payload_path(path, &header.payload);
    let bytes = fs::read(&raw_path).map_err(|e| Error::io(&raw_path, e))?;
    let n = header.dims[0] * header.dims[1] * header.dims[2];
    if bytes.len() != n {
        return Err(Error::LengthMismatch {
            path: raw_path,
            expected: n,
            found: bytes.len(),
        });
    }
    BinaryMask3::new((header.dims[0], header.dims[1], header.dims[2]), bytes)
}

/// Masks carry the spacing of their originating volume so that physical
/// distances can be computed from the mask pair alone.
pub fn write_mask(mask: &BinaryMask3, spacing: (f64, f64, f64), path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let payload = payload_name(path);
    let (nz, ny, nx) = mask.dims();
    let header = GridHeader {
        dims: [nz, ny, nx],
        spacing: [spacing.0, spacing.1, spacing.2],
        dtype: DTYPE_U8.to_string(),
        payload: payload.clone(),
    };
    write_atomic(&payload_path(path, &payload), mask.data())?;
    let text = serde_json::to_string_pretty(&header).expect("header serializes");
    write_atomic(path, text.as_bytes())
}

/// Reads the spacing recorded in any grid header (volume or mask).
pub fn read_spacing(path: impl AsRef<Path>) -> Result<(f64, f64, f64)> {
    let header = read_header(path.as_ref())?;
    Ok((header.spacing[0], header.spacing[1], header.spacing[2]))
}
