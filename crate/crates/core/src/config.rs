//! Run configuration with a flat dotted-key namespace.
//!
//! Files are TOML; nested tables and dotted keys are equivalent, so
//! `train.learning_rate = 0.0002` and `[train] learning_rate = 0.0002` set
//! the same value. Command-line `key=value` overrides are applied after the
//! file.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::Tiling;
use crate::harness::ExperimentConfig;
use crate::synth::SyntheticSceneSpec;
use crate::trainer::TrainConfig;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub window: usize,
    pub stride: usize,
    pub train_fraction: f64,
    pub split_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        let t = Tiling::default();
        Self {
            window: t.window,
            stride: t.stride,
            train_fraction: 0.7,
            split_seed: 0,
        }
    }
}

impl DataConfig {
    pub fn tiling(&self) -> Result<Tiling> {
        Tiling::new(self.window, self.stride)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub train: TrainConfig,
    pub synth: SyntheticSceneSpec,
    pub experiment: ExperimentConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(format!("config is not valid TOML: {e}")))?;
        let mut cfg = Self::default();
        for (key, value) in flatten(&toml_to_json(toml::Value::Table(table))) {
            cfg.set_value(&key, value)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    /// Every leaf key with its current value, sorted.
    pub fn keys(&self) -> Vec<(String, Value)> {
        let mut out = flatten(&serde_json::to_value(self).expect("config serializes"));
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }

    /// Applies one `key=value` override; the value is read as a TOML
    /// literal, falling back to a bare string.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        let value = match format!("v = {raw}").parse::<toml::Table>() {
            Ok(mut t) => toml_to_json(t.remove("v").expect("key present")),
            Err(_) => Value::String(raw.to_string()),
        };
        self.set_value(key, value)
    }

    pub fn apply_overrides<'a>(&mut self, pairs: impl IntoIterator<Item = &'a str>) -> Result<()> {
        for pair in pairs {
            let (k, v) = pair
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override '{pair}' is not key=value")))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    fn set_value(&mut self, key: &str, value: Value) -> Result<()> {
        let mut doc = serde_json::to_value(&*self).expect("config serializes");
        let mut slot = &mut doc;
        for part in key.split('.') {
            slot = slot
                .get_mut(part)
                .ok_or_else(|| Error::Config(format!("unknown config key '{key}'")))?;
        }
        if slot.is_object() {
            return Err(Error::Config(format!("'{key}' is a section, not a value")));
        }
        // integers are accepted where floats are expected
        *slot = match (&*slot, value) {
            (Value::Number(n), Value::Number(v)) if n.is_f64() => {
                Value::from(v.as_f64().expect("numbers convert to f64"))
            }
            (_, v) => v,
        };
        *self = serde_json::from_value(doc)
            .map_err(|e| Error::Config(format!("bad value for '{key}': {e}")))?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.data.tiling()?;
        if !(self.data.train_fraction > 0.0 && self.data.train_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "data.train_fraction must lie in (0, 1], got {}",
                self.data.train_fraction
            )));
        }
        self.train.validate()?;
        self.synth.validate()
    }
}

fn toml_to_json(v: toml::Value) -> Value {
    match v {
        toml::Value::String(s) => Value::String(s),
        toml::Value::Integer(i) => Value::from(i),
        toml::Value::Float(f) => Value::from(f),
        toml::Value::Boolean(b) => Value::Bool(b),
        toml::Value::Datetime(d) => Value::String(d.to_string()),
        toml::Value::Array(a) => Value::Array(a.into_iter().map(toml_to_json).collect()),
        toml::Value::Table(t) => Value::Object(t.into_iter().map(|(k, v)| (k, toml_to_json(v))).collect()),
    }
}

fn flatten(v: &Value) -> Vec<(String, Value)> {
    fn walk(prefix: &str, v: &Value, out: &mut Vec<(String, Value)>) {
        match v {
            Value::Object(map) => {
                for (k, child) in map {
                    let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    walk(&key, child, out);
                }
            }
            leaf => out.push((prefix.to_string(), leaf.clone())),
        }
    }
    let mut out = Vec::new();
    walk("", v, &mut out);
    out
}
