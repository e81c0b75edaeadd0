//! Flat named-tensor container with a hashed manifest.
//!
//! Layout: the 8-byte magic, a little-endian `u64` manifest length, the JSON
//! manifest, then every tensor's little-endian `f32` values back to back. The
//! manifest records names, shapes, byte ranges, seed, stage, and the SHA-256 of
//! the data section; loading refuses data whose hash differs.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::features::{Architecture, FeatureExtractorState};

const MAGIC: &[u8; 8] = b"CYCKPT01";
const FORMAT: &str = "cyclereg-checkpoint/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub offset: u64,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub seed: u64,
    pub stage: usize,
    pub metadata: BTreeMap<String, String>,
    pub tensors: Vec<TensorEntry>,
    pub content_sha256: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub seed: u64,
    pub stage: usize,
    pub metadata: BTreeMap<String, String>,
    pub tensors: Vec<NamedTensor>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut data = Vec::new();
        let mut tensors = Vec::with_capacity(self.tensors.len());
        for t in &self.tensors {
            if t.shape.iter().product::<usize>() != t.data.len() {
                return Err(Error::Shape(format!(
                    "tensor {} does not match its shape {:?}",
                    t.name, t.shape
                )));
            }
            let offset = data.len() as u64;
            for v in &t.data {
                data.extend_from_slice(&v.to_le_bytes());
            }
            tensors.push(TensorEntry {
                name: t.name.clone(),
                shape: t.shape.clone(),
                dtype: "f32".into(),
                offset,
                bytes: data.len() as u64 - offset,
            });
        }
        let manifest = Manifest {
            format: FORMAT.into(),
            seed: self.seed,
            stage: self.stage,
            metadata: self.metadata.clone(),
            tensors,
            content_sha256: sha256_hex(&data),
        };
        let json = serde_json::to_vec(&manifest).expect("manifest serializes");
        let mut out = Vec::with_capacity(16 + json.len() + data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&data);
        Ok(out)
    }

    pub fn from_bytes(path: &Path, bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(Error::format(
                path,
                "not a checkpoint (bad magic or truncated header)",
            ));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = &bytes[16..];
        if body.len() < len {
            return Err(Error::format(path, "truncated manifest"));
        }
        let manifest: Manifest = serde_json::from_slice(&body[..len])
            .map_err(|e| Error::format(path, format!("manifest: {e}")))?;
        if manifest.format != FORMAT {
            return Err(Error::format(
                path,
                format!("unknown format {}", manifest.format),
            ));
        }
        let data = &body[len..];
        let expected: u64 = manifest.tensors.iter().map(|t| t.bytes).sum();
        if (data.len() as u64) < expected {
            return Err(Error::format(
                path,
                format!(
                    "truncated data: manifest lists {expected} bytes, file has {}",
                    data.len()
                ),
            ));
        }
        if data.len() as u64 != expected {
            return Err(Error::format(path, "trailing bytes after tensor data"));
        }
        let found = sha256_hex(data);
        if found != manifest.content_sha256 {
            return Err(Error::HashMismatch {
                path: path.into(),
                expected: manifest.content_sha256,
                found,
            });
        }
        let mut tensors = Vec::with_capacity(manifest.tensors.len());
        for t in &manifest.tensors {
            let (start, end) = (t.offset as usize, (t.offset + t.bytes) as usize);
            if t.dtype != "f32"
                || end > data.len()
                || t.bytes as usize != 4 * t.shape.iter().product::<usize>()
            {
                return Err(Error::format(
                    path,
                    format!("tensor {} has an inconsistent entry", t.name),
                ));
            }
            let values = data[start..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            tensors.push(NamedTensor {
                name: t.name.clone(),
                shape: t.shape.clone(),
                data: values,
            });
        }
        Ok(Self {
            seed: manifest.seed,
            stage: manifest.stage,
            metadata: manifest.metadata,
            tensors,
        })
    }

    /// Written to a temporary sibling first, then renamed into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(path, &bytes)
    }

    pub fn from_state(state: &FeatureExtractorState<f32>, stage: usize) -> Self {
        let widths = state.arch().widths;
        let mut metadata = BTreeMap::new();
        metadata.insert(
            "architecture".into(),
            format!("{},{},{}", widths[0], widths[1], widths[2]),
        );
        let mut tensors = Vec::new();
        for (layout, values) in [
            (state.param_layout(), state.params()),
            (state.buffer_layout(), state.buffers()),
        ] {
            for spec in layout {
                tensors.push(NamedTensor {
                    name: spec.name.clone(),
                    shape: spec.shape.clone(),
                    data: values[spec.range()].to_vec(),
                });
            }
        }
        Self {
            seed: state.seed(),
            stage,
            metadata,
            tensors,
        }
    }

    pub fn to_state(&self) -> Result<FeatureExtractorState<f32>> {
        let arch_text = self
            .metadata
            .get("architecture")
            .ok_or_else(|| Error::InvalidInput("checkpoint lacks an architecture entry".into()))?;
        let widths: Vec<usize> = arch_text
            .split(',')
            .map(|w| w.trim().parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::InvalidInput(format!("bad architecture entry {arch_text:?}")))?;
        let arch = Architecture {
            widths: widths.try_into().map_err(|_| {
                Error::InvalidInput(format!("bad architecture entry {arch_text:?}"))
            })?,
        };
        let by_name: BTreeMap<&str, &NamedTensor> =
            self.tensors.iter().map(|t| (t.name.as_str(), t)).collect();
        let gather = |table: Vec<(String, Vec<usize>)>| -> Result<Vec<f32>> {
            let mut out = Vec::new();
            for (name, shape) in table {
                let t = by_name.get(name.as_str()).ok_or_else(|| {
                    Error::InvalidInput(format!("checkpoint lacks tensor {name}"))
                })?;
                if t.shape != shape {
                    return Err(Error::Shape(format!(
                        "tensor {name}: {:?} vs expected {shape:?}",
                        t.shape
                    )));
                }
                out.extend_from_slice(&t.data);
            }
            Ok(out)
        };
        let params = gather(arch.parameter_table())?;
        let buffers = gather(arch.buffer_table())?;
        FeatureExtractorState::from_parts(arch, self.seed, params, buffers)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        Checkpoint::from_state(
            &FeatureExtractorState::init(Architecture { widths: [4, 4, 8] }, 5),
            2,
        )
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
        let ck = sample();
        ck.save(&a).unwrap();
        let loaded = Checkpoint::load(&a).unwrap();
        assert_eq!(loaded, ck);
        loaded.save(&b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        let state = loaded.to_state().unwrap();
        assert_eq!(
            state,
            FeatureExtractorState::init(Architecture { widths: [4, 4, 8] }, 5)
        );
        assert_eq!(loaded.stage, 2);
    }

    #[test]
    fn corruption_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.ckpt");
        let bytes = sample().to_bytes().unwrap();
        let mut flipped = bytes.clone();
        let last = flipped.len() - 1;
        flipped[last] ^= 0x40;
        std::fs::write(&p, &flipped).unwrap();
        assert!(matches!(
            Checkpoint::load(&p),
            Err(Error::HashMismatch { .. })
        ));
        for cut in [3, 20, bytes.len() - 7] {
            std::fs::write(&p, &bytes[..cut]).unwrap();
            assert!(
                matches!(Checkpoint::load(&p), Err(Error::Format { .. })),
                "cut {cut}"
            );
        }
    }
}
