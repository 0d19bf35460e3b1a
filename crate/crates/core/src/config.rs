//! Run configuration: built-in defaults, then a JSON file, then
//! `dotted.key=value` overrides, each layer replacing the one before.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::backbone::BackboneConfig;
use crate::data::{SplitScheme, DEFAULT_FRAME_RATE, MAX_SECONDS};
use crate::error::{Error, Result};
use crate::head::{HeadConfig, DEFAULT_CLASSES, DEFAULT_CONV_DIM};
use crate::peft::PeftConfig;
use crate::trainer::TrainConfig;

pub const SEED_ENV: &str = "PEFT_SER_SEED";
pub const DEFAULT_PRESET: &str = "toy";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub backbone_preset: Option<String>,
    pub geometry: Option<BackboneConfig>,
    #[serde(default)]
    pub head: HeadSettings,
    #[serde(default)]
    pub peft: PeftConfig,
    #[serde(default)]
    pub train: TrainSettings,
    #[serde(default)]
    pub data: DataSettings,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeadSettings {
    pub conv_dim: usize,
    pub n_classes: usize,
}

impl Default for HeadSettings {
    fn default() -> Self {
        HeadSettings {
            conv_dim: DEFAULT_CONV_DIM,
            n_classes: DEFAULT_CLASSES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSettings {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    /// When non-empty, every fold is trained once per listed seed and
    /// `seed` is ignored.
    pub seeds: Vec<u64>,
    pub augment: bool,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSettings {
            lr: t.lr,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            seed: t.seed,
            seeds: Vec::new(),
            augment: t.augment,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSettings {
    pub manifest: Option<String>,
    pub scheme: SplitScheme,
    pub frame_rate: f64,
    pub max_seconds: f64,
}

impl Default for DataSettings {
    fn default() -> Self {
        DataSettings {
            manifest: None,
            scheme: SplitScheme::default(),
            frame_rate: DEFAULT_FRAME_RATE,
            max_seconds: MAX_SECONDS,
        }
    }
}

impl RunConfig {
    /// Layers defaults, the optional config file, and overrides.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let file_value = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
                Some(
                    serde_json::from_str::<Value>(&text)
                        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
                )
            }
            None => None,
        };
        Self::layered(file_value, overrides, std::env::var(SEED_ENV).ok().as_deref())
    }

    /// The layering itself, with the seed fallback passed in explicitly.
    pub fn layered(file: Option<Value>, overrides: &[String], env_seed: Option<&str>) -> Result<Self> {
        let mut value = serde_json::to_value(RunConfig::default()).expect("defaults serialize");
        if let Some(raw) = env_seed {
            let seed: u64 = raw
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV} must be an unsigned integer, got {raw:?}")))?;
            value["train"]["seed"] = Value::from(seed);
        }
        if let Some(file) = file {
            if !file.is_object() {
                return Err(Error::Config("config file must hold a JSON object".into()));
            }
            merge(&mut value, file);
        }
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let cfg: RunConfig = serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.backbone_preset.is_some() && self.geometry.is_some() {
            return Err(Error::Config("set either backbone_preset or geometry, not both".into()));
        }
        let bb = self.backbone()?;
        self.head(&bb).validate()?;
        self.peft.validate()?;
        self.train_config(self.train.seed).validate()?;
        let positive = |v: f64| v > 0.0;
        if !positive(self.data.frame_rate) || !positive(self.data.max_seconds) {
            return Err(Error::Config("frame_rate and max_seconds must be positive".into()));
        }
        Ok(())
    }

    pub fn backbone(&self) -> Result<BackboneConfig> {
        let cfg = match (&self.geometry, &self.backbone_preset) {
            (Some(g), _) => *g,
            (None, Some(name)) => BackboneConfig::preset(name)?,
            (None, None) => BackboneConfig::preset(DEFAULT_PRESET)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn head(&self, backbone: &BackboneConfig) -> HeadConfig {
        HeadConfig {
            n_layers_in: backbone.n_layers,
            hidden_in: backbone.hidden,
            conv_dim: self.head.conv_dim,
            n_classes: self.head.n_classes,
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            lr: self.train.lr,
            batch_size: self.train.batch_size,
            max_epochs: self.train.max_epochs,
            seed,
            augment: self.train.augment,
        }
    }

    pub fn seeds(&self) -> Vec<u64> {
        if self.train.seeds.is_empty() {
            vec![self.train.seed]
        } else {
            self.train.seeds.clone()
        }
    }
}

/// Recursive object merge. An overlay object whose `kind` differs from the
/// base's replaces it outright, so switching a tagged variant does not keep
/// the old variant's fields.
fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            let kind_changed = matches!((b.get("kind"), o.get("kind")), (Some(x), Some(y)) if x != y);
            if kind_changed {
                *b = o;
                return;
            }
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Applies `a.b.c=value`; the value is read as JSON when it parses, and as a
/// plain string otherwise.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Usage(format!("override {assignment:?} is not key=value")))?;
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Usage(format!("bad override key {key:?}")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    for p in &parts[..parts.len() - 1] {
        if !node.is_object() {
            *node = Value::Object(Map::new());
        }
        node = node
            .as_object_mut()
            .expect("object")
            .entry(p.to_string())
            .or_insert_with(|| Value::Object(Map::new()));
    }
    let last = parts[parts.len() - 1];
    if !node.is_object() {
        *node = Value::Object(Map::new());
    }
    let obj = node.as_object_mut().expect("object");
    match obj.get_mut(last) {
        Some(slot) => merge(slot, value),
        None => {
            obj.insert(last.to_string(), value);
        }
    }
    Ok(())
}
