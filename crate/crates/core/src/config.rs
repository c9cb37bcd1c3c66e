//! Run configuration: JSON, or `key = value` lines with dotted keys.
//!
//! ```text
//! # comment
//! model.dim = 64
//! train.lr_peak = 0.05
//! augment.granularity = "byte"
//! ```

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::augment::AugmentConfig;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::training::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Supervised ArcFace stage.
    pub finetune: TrainConfig,
    pub augment: AugmentConfig,
    /// JPEG quality for encryption.
    pub quality: u8,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            train: TrainConfig::unsupervised(),
            finetune: TrainConfig::supervised(),
            augment: AugmentConfig::default(),
            quality: 50,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let user = if text.trim_start().starts_with('{') {
            serde_json::from_str(text)?
        } else {
            key_values(text)?
        };
        // sections keep their own defaults for keys the user leaves out
        let mut value = serde_json::to_value(RunConfig::default())?;
        merge(&mut value, user);
        let cfg: RunConfig = serde_json::from_value(value).map_err(|e| Error::Invalid(format!("config: {e}")))?;
        cfg.model.validate()?;
        cfg.train.validate()?;
        cfg.finetune.validate()?;
        cfg.augment.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::parse(&text)
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
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

fn key_values(text: &str) -> Result<Value> {
    let mut root = Map::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, raw) = line
            .split_once('=')
            .ok_or_else(|| Error::Invalid(format!("config line {}: expected key = value", ln + 1)))?;
        let raw = raw.trim();
        // bare words are strings; everything else is a JSON literal
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let parts: Vec<&str> = key.trim().split('.').collect();
        let mut node = &mut root;
        for p in &parts[..parts.len() - 1] {
            node = node
                .entry(p.to_string())
                .or_insert_with(|| Value::Object(Map::new()))
                .as_object_mut()
                .ok_or_else(|| Error::Invalid(format!("config line {}: {p} is not a section", ln + 1)))?;
        }
        node.insert(parts[parts.len() - 1].to_string(), value);
    }
    Ok(Value::Object(root))
}
