//! Field files: raw little-endian `f64` samples (row-major) in `<base>.bin`
//! next to a JSON sidecar `<base>.json` holding the [`GridSpec`].

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::grid::{Field, Grid, GridSpec};

/// Resolves `x`, `x.bin` or `x.json` to the `(bin, json)` pair.
pub fn field_paths(path: &Path) -> (PathBuf, PathBuf) {
    let base = match path.extension().and_then(|e| e.to_str()) {
        Some("bin") | Some("json") => path.with_extension(""),
        _ => path.to_path_buf(),
    };
    let mut bin = base.clone().into_os_string();
    bin.push(".bin");
    let mut json = base.into_os_string();
    json.push(".json");
    (PathBuf::from(bin), PathBuf::from(json))
}

pub fn write_field(field: &Field, path: &Path) -> Result<(PathBuf, PathBuf)> {
    let (bin, json) = field_paths(path);
    let mut bytes = Vec::with_capacity(field.len() * 8);
    for v in field.values() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(&bin, bytes)?;
    fs::write(&json, serde_json::to_string_pretty(&field.grid().spec())?)?;
    Ok((bin, json))
}

pub fn read_field(path: &Path) -> Result<Field> {
    let (bin, json) = field_paths(path);
    let spec: GridSpec = serde_json::from_str(&fs::read_to_string(&json)?)?;
    let grid = Grid::from_spec(spec)?;
    read_field_on(&grid, &bin)
}

/// Reads raw samples onto an existing grid (the sidecar is checked if present).
pub fn read_field_on(grid: &Grid, bin: &Path) -> Result<Field> {
    let bytes = fs::read(bin)?;
    if bytes.len() != grid.len() * 8 {
        return Err(Error::SizeMismatch {
            expected: grid.len() * 8,
            got: bytes.len(),
        });
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Field::from_values(grid, values)
}
