//! Binary field files.
//!
//! Layout, all little-endian: `b"TCSK"`, `u32` version (1), `u32` complex
//! dimension `n`, `2n` `u32` axis sizes, then the samples as `f64` in grid
//! order (last axis fastest).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use tcsk_core::{ScalarField, TorusGrid};

pub const MAGIC: &[u8; 4] = b"TCSK";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum FieldIoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed field file: {0}")]
    Malformed(String),
    #[error("unsupported field file version {0}")]
    UnsupportedVersion(u32),
    #[error("payload holds {got} samples, header declares {expected}")]
    SizeMismatch { expected: usize, got: usize },
}

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> FieldIoError + '_ {
    move |source| FieldIoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn encode(field: &ScalarField) -> Vec<u8> {
    let grid = field.grid();
    let mut out = Vec::with_capacity(12 + 4 * grid.sizes().len() + 8 * grid.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(grid.n() as u32).to_le_bytes());
    for &s in grid.sizes() {
        out.extend_from_slice(&(s as u32).to_le_bytes());
    }
    for v in field.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<ScalarField, FieldIoError> {
    let word = |i: usize| -> Result<u32, FieldIoError> {
        bytes
            .get(4 * i..4 * i + 4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
            .ok_or_else(|| FieldIoError::Malformed("truncated header".into()))
    };
    if bytes.get(..4) != Some(MAGIC.as_slice()) {
        return Err(FieldIoError::Malformed("bad magic".into()));
    }
    let version = word(1)?;
    if version != VERSION {
        return Err(FieldIoError::UnsupportedVersion(version));
    }
    let n = word(2)? as usize;
    if n != 1 && n != 2 {
        return Err(FieldIoError::Malformed(format!("complex dimension {n}")));
    }
    let sizes = (0..2 * n).map(|a| Ok(word(3 + a)? as usize)).collect::<Result<Vec<_>, _>>()?;
    let grid = TorusGrid::new(n, &sizes).map_err(|e| FieldIoError::Malformed(e.to_string()))?;
    let payload = &bytes[4 * (3 + 2 * n)..];
    if payload.len() % 8 != 0 || payload.len() / 8 != grid.len() {
        return Err(FieldIoError::Malformed(format!(
            "payload of {} bytes, expected {}",
            payload.len(),
            8 * grid.len()
        )));
    }
    let values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    ScalarField::new(&grid, values).map_err(|e| FieldIoError::Malformed(e.to_string()))
}

/// Writes `bytes` to a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), FieldIoError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(io_error(dir))?;
    let name = path.file_name().and_then(|s| s.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let mut f = fs::File::create(&tmp).map_err(io_error(&tmp))?;
    f.write_all(bytes).and_then(|_| f.sync_all()).map_err(io_error(&tmp))?;
    drop(f);
    fs::rename(&tmp, path).map_err(io_error(path))
}

pub fn write_field(path: &Path, field: &ScalarField) -> Result<(), FieldIoError> {
    write_atomic(path, &encode(field))
}

pub fn read_field(path: &Path) -> Result<ScalarField, FieldIoError> {
    decode(&fs::read(path).map_err(io_error(path))?)
}

/// Reads a field and checks it lives on `grid`.
pub fn read_field_on(path: &Path, grid: &TorusGrid) -> Result<ScalarField, FieldIoError> {
    let f = read_field(path)?;
    if f.grid() != grid {
        return Err(FieldIoError::SizeMismatch {
            expected: grid.len(),
            got: f.grid().len(),
        });
    }
    Ok(f)
}
