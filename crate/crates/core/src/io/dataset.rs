//! Dataset manifests: cases on disk, a train/test split, and the pairing rule.
//!
//! Paths inside a manifest are relative to the manifest's directory. Landmark
//! files hold one `i j k` voxel coordinate per line.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::nifti;
use super::store::{read_json, write_json};
use crate::data::{EvalCase, Lazy, TrainingPair, TrainingSet};
use crate::error::{Error, Result};
use crate::eval::{evaluate_identity, mean_metric};
use crate::metrics::LandmarkSet;
use crate::phantom::{pair_seed, PhantomPair, PhantomSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseEntry {
    pub id: String,
    pub image: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub landmarks: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairEntry {
    pub fixed: String,
    pub moving: String,
    /// Known fixed→moving field, used only for scoring.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<String>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pairing {
    /// Every unordered pair of distinct cases within a split.
    #[default]
    Unordered,
    /// Every ordered pair of distinct cases within a split.
    Ordered,
    /// Only the pairs listed in the manifest.
    Explicit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub cases: Vec<CaseEntry>,
    #[serde(default)]
    pub train: Vec<String>,
    #[serde(default)]
    pub test: Vec<String>,
    #[serde(default)]
    pub pairing: Pairing,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub train_pairs: Vec<PairEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub test_pairs: Vec<PairEntry>,
}

/// Pairs of `ids` under an automatic pairing rule.
pub fn expand_pairs(ids: &[String], pairing: Pairing) -> Vec<PairEntry> {
    let mut out = Vec::new();
    for (a, fa) in ids.iter().enumerate() {
        for (b, mb) in ids.iter().enumerate() {
            let keep = match pairing {
                Pairing::Unordered => a < b,
                Pairing::Ordered => a != b,
                Pairing::Explicit => false,
            };
            if keep {
                out.push(PairEntry {
                    fixed: fa.clone(),
                    moving: mb.clone(),
                    ground_truth: None,
                });
            }
        }
    }
    out
}

pub fn pair_id(p: &PairEntry) -> String {
    format!("{}__{}", p.fixed, p.moving)
}

#[derive(Debug)]
pub struct Dataset {
    pub training: Option<TrainingSet>,
    pub eval: Vec<EvalCase>,
}

impl DatasetManifest {
    pub fn train_pairs(&self) -> Vec<PairEntry> {
        match self.pairing {
            Pairing::Explicit => self.train_pairs.clone(),
            p => expand_pairs(&self.train, p),
        }
    }

    pub fn test_pairs(&self) -> Vec<PairEntry> {
        match self.pairing {
            Pairing::Explicit => self.test_pairs.clone(),
            p => expand_pairs(&self.test, p),
        }
    }

    pub fn validate(&self, path: &Path) -> Result<()> {
        if self.cases.is_empty() {
            return Err(Error::format(path, "manifest lists no cases"));
        }
        let mut ids = BTreeSet::new();
        for c in &self.cases {
            if !ids.insert(c.id.as_str()) {
                return Err(Error::format(path, format!("duplicate case id {}", c.id)));
            }
        }
        for id in self.train.iter().chain(&self.test) {
            if !ids.contains(id.as_str()) {
                return Err(Error::format(
                    path,
                    format!("split references unknown case {id}"),
                ));
            }
        }
        let (train, test) = (self.train_pairs(), self.test_pairs());
        for p in train.iter().chain(&test) {
            for id in [&p.fixed, &p.moving] {
                if !ids.contains(id.as_str()) {
                    return Err(Error::format(
                        path,
                        format!("pair references unknown case {id}"),
                    ));
                }
            }
        }
        if train.is_empty() && test.is_empty() {
            return Err(Error::format(path, "manifest yields no pairs"));
        }
        Ok(())
    }
}

fn read_landmarks(path: &Path, spacing: [f64; 3]) -> Result<LandmarkSet> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut points = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let v: Vec<f64> = line
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|s| !s.is_empty())
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::format(path, format!("line {}: not a number", n + 1)))?;
        let p: [f64; 3] = v.try_into().map_err(|_| {
            Error::format(path, format!("line {}: expected three coordinates", n + 1))
        })?;
        points.push(p);
    }
    LandmarkSet::new(points, spacing).map_err(|e| Error::format(path, e.to_string()))
}

/// Reads and validates a manifest. Images load lazily; every referenced file
/// must exist now.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let manifest: DatasetManifest = read_json(manifest_path)?;
    manifest.validate(manifest_path)?;
    let root = manifest_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let resolve = |rel: &str| -> Result<PathBuf> {
        let p = root.join(rel);
        if !p.exists() {
            return Err(Error::io(
                &p,
                std::io::Error::from(std::io::ErrorKind::NotFound),
            ));
        }
        Ok(p)
    };
    let mut images = BTreeMap::new();
    let mut labels = BTreeMap::new();
    let mut landmarks = BTreeMap::new();
    for c in &manifest.cases {
        images.insert(
            c.id.as_str(),
            Lazy::from_file(resolve(&c.image)?, nifti::read_volume),
        );
        if let Some(l) = &c.labels {
            labels.insert(
                c.id.as_str(),
                Lazy::from_file(resolve(l)?, nifti::read_labels),
            );
        }
        if let Some(l) = &c.landmarks {
            landmarks.insert(c.id.as_str(), resolve(l)?);
        }
    }

    let train = manifest.train_pairs();
    let training = if train.is_empty() {
        None
    } else {
        Some(TrainingSet::new(
            train
                .iter()
                .map(|p| TrainingPair {
                    id: pair_id(p),
                    fixed: images[p.fixed.as_str()].clone(),
                    moving: images[p.moving.as_str()].clone(),
                })
                .collect(),
        )?)
    };

    let mut eval = Vec::new();
    for p in manifest.test_pairs() {
        let (f, m) = (p.fixed.as_str(), p.moving.as_str());
        let lm = match (landmarks.get(f), landmarks.get(m)) {
            (Some(lf), Some(lmv)) => {
                let spacing = images[f].get()?.spacing();
                Some((read_landmarks(lf, spacing)?, read_landmarks(lmv, spacing)?))
            }
            _ => None,
        };
        let ground_truth = match &p.ground_truth {
            Some(g) => Some(Lazy::from_file(resolve(g)?, nifti::read_field)),
            None => None,
        };
        eval.push(EvalCase {
            id: pair_id(&p),
            fixed: images[f].clone(),
            moving: images[m].clone(),
            fixed_labels: labels.get(f).cloned(),
            moving_labels: labels.get(m).cloned(),
            landmarks: lm,
            ground_truth,
        });
    }
    Ok(Dataset { training, eval })
}

/// Per-pair record written by [`write_phantom_dataset`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomRecord {
    pub id: String,
    pub split: String,
    pub seed: u64,
    pub identity_dice: Option<f64>,
    pub identity_epe_mm: Option<f64>,
}

/// Writes `train` then `test` phantoms as one directory per pair plus a
/// top-level manifest with explicit pairs. Pair `i` overall used
/// `pair_seed(spec.seed, i)`.
pub fn write_phantom_dataset(
    dir: &Path,
    spec: &PhantomSpec,
    train: &[PhantomPair],
    test: &[PhantomPair],
) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = DatasetManifest {
        cases: Vec::new(),
        train: Vec::new(),
        test: Vec::new(),
        pairing: Pairing::Explicit,
        train_pairs: Vec::new(),
        test_pairs: Vec::new(),
    };
    for (i, p) in train.iter().chain(test).enumerate() {
        let split = if i < train.len() { "train" } else { "test" };
        let id = format!("pair_{i:03}");
        let pd = dir.join(&id);
        std::fs::create_dir_all(&pd).map_err(|e| Error::io(&pd, e))?;
        nifti::write_volume(&pd.join("fixed.nii.gz"), &p.fixed)?;
        nifti::write_volume(&pd.join("moving.nii.gz"), &p.moving)?;
        nifti::write_labels(&pd.join("fixed_labels.nii.gz"), &p.fixed_labels)?;
        nifti::write_labels(&pd.join("moving_labels.nii.gz"), &p.moving_labels)?;
        nifti::write_field(&pd.join("field.nii.gz"), &p.field)?;
        let case = EvalCase::from_phantom(id.clone(), p);
        let rows = evaluate_identity(&case)?;
        write_json(
            &pd.join("manifest.json"),
            &PhantomRecord {
                id: id.clone(),
                split: split.into(),
                seed: pair_seed(spec.seed, i),
                identity_dice: mean_metric(&rows, "dice"),
                identity_epe_mm: mean_metric(&rows, "epe_mm"),
            },
        )?;
        let (fixed, moving) = (format!("{id}_fixed"), format!("{id}_moving"));
        manifest.cases.push(CaseEntry {
            id: fixed.clone(),
            image: format!("{id}/fixed.nii.gz"),
            labels: Some(format!("{id}/fixed_labels.nii.gz")),
            landmarks: None,
        });
        manifest.cases.push(CaseEntry {
            id: moving.clone(),
            image: format!("{id}/moving.nii.gz"),
            labels: Some(format!("{id}/moving_labels.nii.gz")),
            landmarks: None,
        });
        let entry = PairEntry {
            fixed,
            moving,
            ground_truth: Some(format!("{id}/field.nii.gz")),
        };
        if split == "train" {
            manifest.train_pairs.push(entry);
        } else {
            manifest.test_pairs.push(entry);
        }
    }
    let path = dir.join("manifest.json");
    write_json(&path, &manifest)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn pair_counts() {
        assert_eq!(expand_pairs(&ids(20), Pairing::Unordered).len(), 190);
        assert_eq!(expand_pairs(&ids(20), Pairing::Ordered).len(), 380);
        assert_eq!(expand_pairs(&ids(10), Pairing::Unordered).len(), 45);
        assert!(expand_pairs(&ids(10), Pairing::Unordered)
            .iter()
            .all(|p| p.fixed != p.moving));
    }

    #[test]
    fn empty_and_dangling_manifests_are_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        std::fs::write(&p, r#"{"cases": []}"#).unwrap();
        assert!(matches!(load_dataset(&p), Err(Error::Format { .. })));
        std::fs::write(
            &p,
            r#"{"cases": [{"id": "a", "image": "a.nii.gz"}], "train": ["a", "b"]}"#,
        )
        .unwrap();
        assert!(matches!(load_dataset(&p), Err(Error::Format { .. })));
        std::fs::write(&p, r#"{"cases": [{"id": "a", "image": "a.nii.gz"}, {"id": "b", "image": "b.nii.gz"}], "train": ["a", "b"]}"#)
            .unwrap();
        assert!(matches!(load_dataset(&p), Err(Error::Io { .. })));
    }

    #[test]
    fn landmark_files_parse() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("l.txt");
        std::fs::write(&p, "# i j k\n1 2 3\n4.5, 5, 6\n").unwrap();
        let l = read_landmarks(&p, [2.0; 3]).unwrap();
        assert_eq!(l.points, vec![[1.0, 2.0, 3.0], [4.5, 5.0, 6.0]]);
        std::fs::write(&p, "1 2\n").unwrap();
        assert!(read_landmarks(&p, [2.0; 3]).is_err());
    }
}
