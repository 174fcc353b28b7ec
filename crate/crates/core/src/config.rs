//! The single JSON run configuration shared by every command.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::diffusion::{SamplerConfig, ScheduleConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::model::ModelKind;
use crate::nn::NetworkSpec;
use crate::world::WorldConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub width: usize,
    pub num_blocks: usize,
    pub init_seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            width: 64,
            num_blocks: 6,
            init_seed: 0,
        }
    }
}

impl NetworkConfig {
    pub fn spec(&self, target_dim: usize, query_dim: usize) -> NetworkSpec {
        NetworkSpec::new(target_dim, query_dim, self.width, self.num_blocks)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub kind: ModelKind,
    pub world: WorldConfig,
    pub eval_fraction: f64,
    pub split_seed: u64,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub schedule: ScheduleConfig,
    /// Replace `schedule.sigma_data` with the catalog's pooled coordinate std.
    pub estimate_sigma_data: bool,
    pub sampler: SamplerConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::Diffusion,
            world: WorldConfig::default(),
            eval_fraction: 0.2,
            split_seed: 0,
            network: NetworkConfig::default(),
            train: TrainConfig::default(),
            schedule: ScheduleConfig::default(),
            estimate_sigma_data: true,
            sampler: SamplerConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        if !(self.eval_fraction > 0.0 && self.eval_fraction < 1.0) {
            return Err(Error::Config(format!("eval_fraction {} outside (0, 1)", self.eval_fraction)));
        }
        self.network.spec(2, 2).validate()?;
        self.train.validate()?;
        self.schedule.validate()?;
        self.sampler.validate()?;
        self.eval.validate()
    }

    /// Parses, applies `key.path=value` overrides, and validates.
    pub fn from_json_with_overrides(text: Option<&str>, overrides: &[String]) -> Result<Self> {
        let mut doc = match text {
            Some(t) => serde_json::from_str(t).map_err(|e| Error::Config(format!("config is not valid JSON: {e}")))?,
            None => Value::Object(Default::default()),
        };
        let full = serde_json::to_value(RunConfig::default())?;
        for o in overrides {
            apply_override(&mut doc, &full, o)?;
        }
        let cfg: RunConfig = serde_json::from_value(doc).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = path.map(std::fs::read_to_string).transpose()?;
        Self::from_json_with_overrides(text.as_deref(), overrides)
    }

    /// Canonical serialized form; used for hashing.
    pub fn canonical_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

/// Sets `key.path=value` in `doc`. The path must exist in `schema` (the
/// default configuration); `value` is parsed as JSON, falling back to a string.
pub fn apply_override(doc: &mut Value, schema: &Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
    let keys: Vec<&str> = path.split('.').collect();
    let mut probe = schema;
    for k in &keys {
        probe = probe
            .get(k)
            .ok_or_else(|| Error::Config(format!("unknown configuration key {path:?}")))?;
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    for k in &keys[..keys.len() - 1] {
        if !node.is_object() {
            return Err(Error::Config(format!("{path:?} crosses a non-object value")));
        }
        node = node
            .as_object_mut()
            .unwrap()
            .entry(k.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    node.as_object_mut()
        .ok_or_else(|| Error::Config(format!("{path:?} crosses a non-object value")))?
        .insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}
