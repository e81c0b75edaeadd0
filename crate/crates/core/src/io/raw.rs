//! Raw little-endian float32 data with a JSON sidecar header.
//!
//! `name.raw` holds the values in memory order (component-major for fields);
//! `name.raw.json` records shape, spacing, component count, and grid scale.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{numel, DisplacementField, Shape, Volume};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawHeader {
    pub shape: Shape,
    pub spacing: [f64; 3],
    pub grid_scale: usize,
    pub components: usize,
    pub dtype: String,
}

pub fn header_path(data: &Path) -> PathBuf {
    let mut s = data.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn write(path: &Path, header: &RawHeader, values: impl Iterator<Item = f32>) -> Result<()> {
    let mut bytes = Vec::with_capacity(numel(header.shape) * header.components * 4);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    let hp = header_path(path);
    let json = serde_json::to_string_pretty(header).expect("header serializes");
    std::fs::write(&hp, json).map_err(|e| Error::io(&hp, e))
}

fn read(path: &Path) -> Result<(RawHeader, Vec<f32>)> {
    let hp = header_path(path);
    let text = std::fs::read_to_string(&hp).map_err(|e| Error::io(&hp, e))?;
    let header: RawHeader =
        serde_json::from_str(&text).map_err(|e| Error::format(&hp, e.to_string()))?;
    if header.dtype != "f32le" {
        return Err(Error::format(
            &hp,
            format!("unsupported dtype {}", header.dtype),
        ));
    }
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let expected = numel(header.shape) * header.components * 4;
    if bytes.len() != expected {
        return Err(Error::format(
            path,
            format!("expected {expected} bytes, found {}", bytes.len()),
        ));
    }
    let values = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok((header, values))
}

pub fn write_volume(path: &Path, vol: &Volume) -> Result<()> {
    let header = RawHeader {
        shape: vol.shape(),
        spacing: vol.spacing(),
        grid_scale: 1,
        components: 1,
        dtype: "f32le".into(),
    };
    write(path, &header, vol.data().iter().copied())
}

pub fn read_volume(path: &Path) -> Result<Volume> {
    let (h, values) = read(path)?;
    if h.components != 1 {
        return Err(Error::format(path, "expected a scalar volume"));
    }
    Volume::new(h.shape, h.spacing, values).map_err(|e| Error::format(path, e.to_string()))
}

/// Fields lose precision to float32 here; use NIfTI for exact storage.
pub fn write_field(path: &Path, field: &DisplacementField) -> Result<()> {
    let header = RawHeader {
        shape: field.shape(),
        spacing: field.spacing(),
        grid_scale: field.grid_scale(),
        components: 3,
        dtype: "f32le".into(),
    };
    write(path, &header, field.data().iter().map(|&v| v as f32))
}

pub fn read_field(path: &Path) -> Result<DisplacementField> {
    let (h, values) = read(path)?;
    if h.components != 3 {
        return Err(Error::format(path, "expected a 3-component field"));
    }
    DisplacementField::new(
        h.shape,
        h.spacing,
        h.grid_scale,
        values.into_iter().map(f64::from).collect(),
    )
    .map_err(|e| Error::format(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let vol = Volume::from_fn([2, 3, 4], [1.0, 2.0, 3.0], |i, j, k| {
            (i + 2 * j + 3 * k) as f32 / 7.0
        })
        .unwrap();
        let p = dir.path().join("v.raw");
        write_volume(&p, &vol).unwrap();
        assert_eq!(read_volume(&p).unwrap(), vol);
        assert!(header_path(&p).exists());
        let f = DisplacementField::constant([2, 2, 2], [2.0; 3], 4, [0.5, -1.25, 3.0]).unwrap();
        let q = dir.path().join("f.raw");
        write_field(&q, &f).unwrap();
        assert_eq!(read_field(&q).unwrap(), f);
        assert!(read_volume(&q).is_err());
        std::fs::write(&q, [0u8; 5]).unwrap();
        assert!(read_field(&q).is_err());
    }
}
