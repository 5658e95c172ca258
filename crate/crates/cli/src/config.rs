//! The run configuration: one JSON document with a section per component,
//! plus `--set key=value` overrides on dotted paths.

use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use tcm_core::data::{CorpusSpec, LengthMode};
use tcm_core::metrics::TdcfCosts;
use tcm_core::train::TrainConfig;
use tcm_core::ModelConfig;

pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalOptions {
    pub mode: LengthMode,
    /// Scoring threads.
    pub jobs: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            mode: LengthMode::Fixed,
            jobs: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepOptions {
    pub heads: Vec<usize>,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions { heads: vec![4, 6, 8] }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub corpus: CorpusSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Required by every command that computes min t-DCF; there are no
    /// default costs.
    pub tdcf: Option<TdcfCosts>,
    pub eval: EvalOptions,
    pub sweep: SweepOptions,
}

impl RunConfig {
    /// Reads `path`, applies the overrides in order and validates keys.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let mut value: Value =
            serde_json::from_str(&text).with_context(|| format!("config {} is not valid JSON", path.display()))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        Self::from_value(value).with_context(|| format!("in config {}", path.display()))
    }

    pub fn from_value(value: Value) -> Result<Self> {
        serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            anyhow!("key {path}: {}", e.into_inner())
        })
    }

    pub fn costs(&self) -> Result<TdcfCosts> {
        let c = self
            .tdcf
            .ok_or_else(|| anyhow!("key tdcf: explicit t-DCF costs {{c0, c1, c2}} are required"))?;
        c.validate().context("key tdcf")?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate().context("key model")?;
        self.train.validate().context("key train")?;
        if self.eval.jobs == 0 {
            bail!("key eval.jobs: must be at least 1");
        }
        Ok(())
    }

    pub fn write_resolved(&self, dir: &Path) -> Result<()> {
        let path = dir.join(RESOLVED_CONFIG_FILE);
        fs::write(&path, serde_json::to_string_pretty(self)? + "\n")
            .with_context(|| format!("cannot write {}", path.display()))
    }
}

/// Applies `a.b.c=value`. The value is parsed as JSON when possible and kept
/// as a string otherwise. Missing intermediate objects are created; the key
/// itself is checked when the result is deserialized.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| anyhow!("override {assignment:?} is not of the form key=value"))?;
    if key.is_empty() || key.split('.').any(str::is_empty) {
        bail!("override {assignment:?} has an empty key segment");
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_owned()));
    let mut node = root;
    let mut segments = key.split('.').peekable();
    while let Some(seg) = segments.next() {
        let obj = match node {
            Value::Object(m) => m,
            Value::Null => {
                *node = Value::Object(Map::new());
                node.as_object_mut().expect("just set")
            }
            _ => bail!("override {key}: {seg:?} is inside a non-object value"),
        };
        if segments.peek().is_none() {
            obj.insert(seg.to_owned(), value);
            return Ok(());
        }
        node = obj.entry(seg.to_owned()).or_insert(Value::Null);
    }
    unreachable!("key has at least one segment")
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn overrides_parse_json_and_fall_back_to_strings() {
        let mut v = json!({"train": {"lr": 0.1}});
        apply_override(&mut v, "train.lr=0.5").unwrap();
        apply_override(&mut v, "eval.mode=variable").unwrap();
        apply_override(&mut v, "sweep.heads=[2,4]").unwrap();
        assert_eq!(
            v,
            json!({"train": {"lr": 0.5}, "eval": {"mode": "variable"}, "sweep": {"heads": [2, 4]}})
        );
        let c = RunConfig::from_value(v).unwrap();
        assert_eq!(
            (c.train.lr, c.eval.mode, c.sweep.heads),
            (0.5, LengthMode::Variable, vec![2, 4])
        );
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = RunConfig::from_value(json!({"model": {"heds": 4}})).unwrap_err();
        assert!(format!("{err:#}").contains("model"), "{err:#}");
        assert!(format!("{err:#}").contains("heds"), "{err:#}");
        let mut v = json!({});
        apply_override(&mut v, "train.bogus=1").unwrap();
        assert!(RunConfig::from_value(v).is_err());
    }

    #[test]
    fn malformed_overrides_rejected() {
        let mut v = json!({"model": 3});
        assert!(apply_override(&mut v, "no_equals").is_err());
        assert!(apply_override(&mut v, "a..b=1").is_err());
        assert!(apply_override(&mut v, "model.heads=2").is_err());
    }

    #[test]
    fn defaults_round_trip_through_json() {
        let c = RunConfig::default();
        let back = RunConfig::from_value(serde_json::to_value(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        assert!(c.costs().is_err());
    }
}
