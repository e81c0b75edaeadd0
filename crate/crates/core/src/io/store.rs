//! Versioned pseudo-label store and on-disk run directory.
//!
//! A run directory holds `labels/stage_XX/` (one NIfTI pair of fields per
//! training pair plus `manifest.json`), `checkpoints/stage_XX.ckpt`, and
//! `reports/stage_XX.json` with the per-iteration curves next to it.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::checkpoint::{sha256_hex, Checkpoint};
use super::{nifti, report};
use crate::error::{Error, Result};
use crate::features::FeatureExtractorState;
use crate::selftrain::{LabelEntry, PseudoLabelStore, RunStorage, StageLog, StageReport};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoreEntry {
    pub pair_id: String,
    pub stage: usize,
    pub difficulty: f64,
    pub refined_file: String,
    pub refined_sha256: String,
    pub raw_file: String,
    pub raw_sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoreManifest {
    pub stage: usize,
    pub entries: Vec<StoreEntry>,
}

pub const MANIFEST: &str = "manifest.json";

fn stage_name(stage: usize) -> String {
    format!("stage_{stage:02}")
}

fn write_hashed(dir: &Path, name: &str, field: &crate::grid::DisplacementField) -> Result<String> {
    let path = dir.join(name);
    nifti::write_field(&path, field)?;
    let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    Ok(sha256_hex(&bytes))
}

fn read_hashed(dir: &Path, name: &str, expected: &str) -> Result<crate::grid::DisplacementField> {
    let path = dir.join(name);
    let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let found = sha256_hex(&bytes);
    if found != expected {
        return Err(Error::HashMismatch {
            path,
            expected: expected.into(),
            found,
        });
    }
    nifti::read_field(&path)
}

/// Writes one stage of labels into `dir`; the manifest is written last so a
/// partially written stage is never mistaken for a complete one.
pub fn save_labels(dir: &Path, labels: &PseudoLabelStore) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(labels.entries.len());
    for e in &labels.entries {
        let refined_file = format!("{}_refined.nii.gz", e.pair_id);
        let raw_file = format!("{}_raw.nii.gz", e.pair_id);
        entries.push(StoreEntry {
            pair_id: e.pair_id.clone(),
            stage: labels.stage,
            difficulty: e.difficulty,
            refined_sha256: write_hashed(dir, &refined_file, &e.refined)?,
            raw_sha256: write_hashed(dir, &raw_file, &e.raw)?,
            refined_file,
            raw_file,
        });
    }
    let manifest = StoreManifest {
        stage: labels.stage,
        entries,
    };
    write_json(&dir.join(MANIFEST), &manifest)
}

/// Reads a stage written by [`save_labels`], verifying every file hash.
pub fn load_labels(dir: &Path) -> Result<PseudoLabelStore> {
    let manifest: StoreManifest = read_json(&dir.join(MANIFEST))?;
    let mut entries = Vec::with_capacity(manifest.entries.len());
    for e in &manifest.entries {
        entries.push(LabelEntry {
            pair_id: e.pair_id.clone(),
            refined: read_hashed(dir, &e.refined_file, &e.refined_sha256)?,
            raw: read_hashed(dir, &e.raw_file, &e.raw_sha256)?,
            difficulty: e.difficulty,
        });
    }
    Ok(PseudoLabelStore {
        stage: manifest.stage,
        entries,
    })
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

/// Exclusive claim on an output directory, released on drop.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub const FILE: &'static str = "run.lock";

    pub fn acquire(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(Self::FILE);
        let mut file: File = OpenOptions::new().write(true).create_new(true).open(&path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::AlreadyExists {
                Error::InvalidInput(format!(
                    "{} exists: another run owns this directory (delete the file if that run is dead)",
                    path.display()
                ))
            } else {
                Error::io(&path, e)
            }
        })?;
        writeln!(file, "{}", std::process::id()).map_err(|e| Error::io(&path, e))?;
        Ok(Self { path })
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

/// Persists checkpoints, label stores, and stage reports under one directory
/// so an interrupted run resumes from its last complete stage.
#[derive(Debug)]
pub struct RunDirectory {
    root: PathBuf,
    _lock: RunLock,
}

impl RunDirectory {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        let lock = RunLock::acquire(&root)?;
        for sub in ["labels", "checkpoints", "reports"] {
            let d = root.join(sub);
            std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        }
        Ok(Self { root, _lock: lock })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn labels_dir(&self, stage: usize) -> PathBuf {
        self.root.join("labels").join(stage_name(stage))
    }

    pub fn checkpoint_path(&self, stage: usize) -> PathBuf {
        self.root
            .join("checkpoints")
            .join(format!("{}.ckpt", stage_name(stage)))
    }

    pub fn report_path(&self, stage: usize) -> PathBuf {
        self.root
            .join("reports")
            .join(format!("{}.json", stage_name(stage)))
    }
}

impl RunStorage for RunDirectory {
    fn load_checkpoint(&mut self, stage: usize) -> Result<Option<FeatureExtractorState<f32>>> {
        let p = self.checkpoint_path(stage);
        if !p.exists() {
            return Ok(None);
        }
        let ck = Checkpoint::load(&p)?;
        if ck.stage != stage {
            return Err(Error::format(
                &p,
                format!("holds stage {}, expected {stage}", ck.stage),
            ));
        }
        ck.to_state().map(Some)
    }

    fn save_checkpoint(&mut self, stage: usize, state: &FeatureExtractorState<f32>) -> Result<()> {
        Checkpoint::from_state(state, stage).save(&self.checkpoint_path(stage))
    }

    fn load_labels(&mut self, stage: usize) -> Result<Option<PseudoLabelStore>> {
        let dir = self.labels_dir(stage);
        if !dir.join(MANIFEST).exists() {
            return Ok(None);
        }
        load_labels(&dir).map(Some)
    }

    fn save_labels(&mut self, labels: &PseudoLabelStore) -> Result<()> {
        save_labels(&self.labels_dir(labels.stage), labels)
    }

    fn load_report(&mut self, stage: usize) -> Result<Option<StageReport>> {
        let p = self.report_path(stage);
        if !p.exists() {
            return Ok(None);
        }
        read_json(&p).map(Some)
    }

    fn save_report(&mut self, r: &StageReport, log: Option<&StageLog>) -> Result<()> {
        let dir = self.root.join("reports");
        if let Some(log) = log {
            let name = stage_name(r.stage);
            let steps = |v: &[f64]| {
                v.iter()
                    .enumerate()
                    .map(|(i, &y)| (i as f64, y))
                    .collect::<Vec<_>>()
            };
            report::write_curve(&dir.join(format!("{name}_loss.txt")), &steps(&log.losses))?;
            report::write_curve(
                &dir.join(format!("{name}_lr.txt")),
                &steps(&log.learning_rates),
            )?;
        }
        report::write_metrics(
            &dir.join(format!("{}_metrics.csv", stage_name(r.stage))),
            &r.eval,
        )?;
        write_json(&self.report_path(r.stage), r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::DisplacementField;

    fn store(stage: usize) -> PseudoLabelStore {
        let f = |v: f64| DisplacementField::constant([2, 3, 2], [2.0; 3], 8, [v, -v, 0.5]).unwrap();
        PseudoLabelStore {
            stage,
            entries: (0..3)
                .map(|i| LabelEntry {
                    pair_id: format!("p{i}"),
                    refined: f(i as f64 * 0.25),
                    raw: f(1.0),
                    difficulty: i as f64 + 0.5,
                })
                .collect(),
        }
    }

    #[test]
    fn labels_round_trip_and_detect_tampering() {
        let dir = tempfile::tempdir().unwrap();
        let s = store(2);
        save_labels(dir.path(), &s).unwrap();
        assert_eq!(load_labels(dir.path()).unwrap(), s);
        let m: StoreManifest = read_json(&dir.path().join(MANIFEST)).unwrap();
        assert!(m.entries.iter().all(|e| e.stage == 2));
        nifti::write_field(
            &dir.path().join("p1_raw.nii.gz"),
            &store(0).entries[0].refined,
        )
        .unwrap();
        assert!(matches!(
            load_labels(dir.path()),
            Err(Error::HashMismatch { .. })
        ));
    }

    #[test]
    fn lock_is_exclusive_and_released() {
        let dir = tempfile::tempdir().unwrap();
        let run = RunDirectory::open(dir.path()).unwrap();
        assert!(RunDirectory::open(dir.path()).is_err());
        drop(run);
        let mut run = RunDirectory::open(dir.path()).unwrap();
        assert!(run.load_labels(0).unwrap().is_none());
        run.save_labels(&store(0)).unwrap();
        assert_eq!(run.load_labels(0).unwrap().unwrap(), store(0));
    }
}
