//! Run configuration: TOML file, dotted `--key value` overrides, and the
//! resolved snapshot written next to every run's outputs.

use std::path::Path;

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::phantom::PhantomSpec;
use crate::selftrain::SelfTrainingConfig;

pub const SNAPSHOT_FILE: &str = "resolved_config.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Paths {
    /// Dataset manifest read by `train`, `pseudo-labels`, `infer`, and `evaluate`.
    pub manifest: String,
    pub output: String,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            manifest: "data/manifest.json".into(),
            output: "runs/default".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub train_pairs: usize,
    pub test_pairs: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            train_pairs: 12,
            test_pairs: 4,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: Paths,
    pub synth: SynthConfig,
    pub phantom: PhantomSpec,
    pub training: SelfTrainingConfig,
}

/// Short flags accepted in place of their full dotted keys.
pub const ALIASES: [(&str, &str); 4] = [
    ("stages", "training.schedule.stages"),
    ("iters", "training.schedule.iterations_per_stage"),
    ("output", "paths.output"),
    ("manifest", "paths.manifest"),
];

pub fn resolve_key(key: &str) -> &str {
    ALIASES
        .iter()
        .find(|(a, _)| *a == key)
        .map_or(key, |(_, full)| full)
}

fn defaults_table() -> Table {
    Table::try_from(RunConfig::default()).expect("defaults serialize")
}

/// Overlays `src` onto `dst`, rejecting keys that `dst` does not define.
fn merge(dst: &mut Table, src: Table, prefix: &str) -> Result<()> {
    for (k, v) in src {
        let key = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match (dst.get_mut(&k), v) {
            (None, _) => return Err(Error::Config(format!("unknown key {key}"))),
            (Some(Value::Table(d)), Value::Table(s)) => merge(d, s, &key)?,
            (Some(Value::Table(_)), _) => {
                return Err(Error::Config(format!("{key} is a section, not a value")))
            }
            (Some(slot), v) => *slot = coerce(&key, slot, v)?,
        }
    }
    Ok(())
}

/// Lets integers stand in for floats and bare words for strings.
fn coerce(key: &str, like: &Value, v: Value) -> Result<Value> {
    Ok(match (like, v) {
        (Value::Float(_), Value::Integer(i)) => Value::Float(i as f64),
        (Value::String(_), Value::String(s)) => Value::String(s),
        (Value::String(_), other) => Value::String(other.to_string()),
        (like, v) if std::mem::discriminant(like) == std::mem::discriminant(&v) => v,
        (like, v) => {
            return Err(Error::Config(format!(
                "{key}: expected {}, got {}",
                like.type_str(),
                v.type_str()
            )))
        }
    })
}

fn parse_value(text: &str) -> Value {
    toml::from_str::<Table>(&format!("v = {text}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(text.to_string()))
}

fn nest(key: &str, value: Value) -> Table {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("split yields at least one part");
    let mut t = Table::new();
    t.insert(last.to_string(), value);
    for p in parts.into_iter().rev() {
        let mut outer = Table::new();
        outer.insert(p.to_string(), Value::Table(t));
        t = outer;
    }
    t
}

impl RunConfig {
    /// Defaults, then the file (if any), then each override in order.
    pub fn resolve(file_text: Option<&str>, overrides: &[(String, String)]) -> Result<Self> {
        let mut table = defaults_table();
        if let Some(text) = file_text {
            let user: Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
            merge(&mut table, user, "")?;
        }
        for (key, value) in overrides {
            let key = resolve_key(key);
            if key.is_empty() || key.split('.').any(str::is_empty) {
                return Err(Error::Config(format!("malformed key {key:?}")));
            }
            merge(&mut table, nest(key, parse_value(value)), "")?;
        }
        let cfg: RunConfig = Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let text = match path {
            Some(p) => Some(std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?),
            None => None,
        };
        Self::resolve(text.as_deref(), overrides)
    }

    pub fn validate(&self) -> Result<()> {
        self.phantom.validate()?;
        self.training.validate()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn write_snapshot(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let p = dir.join(SNAPSHOT_FILE);
        std::fs::write(&p, self.to_toml()).map_err(|e| Error::io(&p, e))
    }
}
