//! In-memory and lazily loaded registration pairs.

use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};

use crate::error::{Error, Result};
use crate::grid::{DisplacementField, LabelVolume, Volume};
use crate::metrics::LandmarkSet;
use crate::phantom::PhantomPair;

/// A value that is either held in memory or read from disk on first use.
pub struct Lazy<T> {
    path: Option<PathBuf>,
    load: fn(&Path) -> Result<T>,
    cell: OnceLock<T>,
}

impl<T> Lazy<T> {
    pub fn ready(value: T) -> Arc<Self> {
        let cell = OnceLock::new();
        let _ = cell.set(value);
        Arc::new(Self {
            path: None,
            load: |_| unreachable!("value is already loaded"),
            cell,
        })
    }

    pub fn from_file(path: impl Into<PathBuf>, load: fn(&Path) -> Result<T>) -> Arc<Self> {
        Arc::new(Self {
            path: Some(path.into()),
            load,
            cell: OnceLock::new(),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn get(&self) -> Result<&T> {
        if let Some(v) = self.cell.get() {
            return Ok(v);
        }
        let path = self
            .path
            .as_deref()
            .expect("unloaded values always carry a path");
        let _ = self.cell.set((self.load)(path)?);
        Ok(self.cell.get().expect("just initialized"))
    }
}

impl<T: std::fmt::Debug> std::fmt::Debug for Lazy<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Lazy")
            .field("path", &self.path)
            .field("loaded", &self.cell.get().is_some())
            .finish()
    }
}

pub type ImageRef = Arc<Lazy<Volume>>;
pub type LabelRef = Arc<Lazy<LabelVolume>>;

#[derive(Clone, Debug)]
pub struct TrainingPair {
    pub id: String,
    pub fixed: ImageRef,
    pub moving: ImageRef,
}

/// Unlabelled pairs used for self-training.
#[derive(Clone, Debug)]
pub struct TrainingSet {
    pairs: Vec<TrainingPair>,
}

impl TrainingSet {
    pub fn new(pairs: Vec<TrainingPair>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::InvalidInput("training set is empty".into()));
        }
        let mut ids: Vec<&str> = pairs.iter().map(|p| p.id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidInput(
                "training pair ids must be unique".into(),
            ));
        }
        Ok(Self { pairs })
    }

    pub fn from_phantoms(pairs: &[PhantomPair], prefix: &str) -> Result<Self> {
        Self::new(
            pairs
                .iter()
                .enumerate()
                .map(|(i, p)| TrainingPair {
                    id: format!("{prefix}{i:03}"),
                    fixed: Lazy::ready(p.fixed.clone()),
                    moving: Lazy::ready(p.moving.clone()),
                })
                .collect(),
        )
    }

    pub fn pairs(&self) -> &[TrainingPair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Loads both images of pair `i` and checks that they share a grid with the
    /// first pair.
    pub fn load(&self, i: usize) -> Result<(&Volume, &Volume)> {
        let p = &self.pairs[i];
        let (f, m) = (p.fixed.get()?, p.moving.get()?);
        let reference = self.pairs[0].fixed.get()?;
        for v in [f, m] {
            if v.shape() != reference.shape() || v.spacing() != reference.spacing() {
                return Err(Error::Shape(format!(
                    "pair {}: grid {:?} @ {:?} differs from {:?} @ {:?}",
                    p.id,
                    v.shape(),
                    v.spacing(),
                    reference.shape(),
                    reference.spacing()
                )));
            }
        }
        Ok((f, m))
    }
}

/// A held-out pair with whatever annotations are available.
#[derive(Clone, Debug)]
pub struct EvalCase {
    pub id: String,
    pub fixed: ImageRef,
    pub moving: ImageRef,
    pub fixed_labels: Option<LabelRef>,
    pub moving_labels: Option<LabelRef>,
    pub landmarks: Option<(LandmarkSet, LandmarkSet)>,
    pub ground_truth: Option<Arc<Lazy<DisplacementField>>>,
}

impl EvalCase {
    pub fn from_phantom(id: impl Into<String>, p: &PhantomPair) -> Self {
        Self {
            id: id.into(),
            fixed: Lazy::ready(p.fixed.clone()),
            moving: Lazy::ready(p.moving.clone()),
            fixed_labels: Some(Lazy::ready(p.fixed_labels.clone())),
            moving_labels: Some(Lazy::ready(p.moving_labels.clone())),
            landmarks: None,
            ground_truth: Some(Lazy::ready(p.field.clone())),
        }
    }
}
