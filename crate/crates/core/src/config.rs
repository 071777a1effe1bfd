//! Flat `key = value` configuration files.
//!
//! Keys are dotted paths into the run configuration (`scenario.n_days`,
//! `walk.p`, `train.epochs`, ...). Lists are comma separated. Lines starting
//! with `#` are comments.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::node2vec::WalkConfig;
use crate::scenario::ScenarioConfig;
use crate::training::ExperimentConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct RunConfig {
    pub scenario: ScenarioConfig,
    pub walk: WalkConfig,
    pub train: ExperimentConfig,
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::Missing(path.to_path_buf()));
        }
        let mut cfg = RunConfig::default();
        cfg.apply_text(&fs::read_to_string(path)?)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        self.validate()
    }

    /// Sets one dotted key, parsing `value` according to the field's
    /// current type.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut tree = serde_json::to_value(&*self)?;
        let mut slot = &mut tree;
        for part in key.split('.') {
            slot = slot
                .get_mut(part)
                .ok_or_else(|| Error::Config(format!("unknown config key {key:?}")))?;
        }
        *slot = parse_like(slot, value).ok_or_else(|| Error::Config(format!("{key}: cannot parse {value:?}")))?;
        *self = serde_json::from_value(tree).map_err(|e| Error::Config(format!("{key}: {e}")))?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.walk.validate()?;
        self.train.validate()
    }

    /// Every key with its resolved value, sorted, one per line.
    pub fn to_text(&self) -> String {
        let tree = serde_json::to_value(self).expect("serializable");
        let mut lines = Vec::new();
        flatten("", &tree, &mut lines);
        lines.sort();
        let mut s = String::new();
        for (k, v) in lines {
            writeln!(s, "{k} = {v}").unwrap();
        }
        s
    }

    /// Keys whose values differ between two configs.
    pub fn diff(&self, other: &RunConfig) -> Vec<String> {
        let a = self.to_text();
        let b = other.to_text();
        a.lines()
            .zip(b.lines())
            .filter(|(x, y)| x != y)
            .map(|(x, _)| x.split(" = ").next().unwrap_or("").to_string())
            .collect()
    }
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    match v {
        Value::Object(map) => {
            for (k, child) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, child, out);
            }
        }
        Value::Array(items) => {
            let parts: Vec<String> = items.iter().map(scalar_text).collect();
            out.push((prefix.to_string(), parts.join(",")));
        }
        other => out.push((prefix.to_string(), scalar_text(other))),
    }
}

fn scalar_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn parse_scalar(template: &Value, s: &str) -> Option<Value> {
    match template {
        Value::Bool(_) => s.parse::<bool>().ok().map(Value::Bool),
        Value::Number(n) if n.is_u64() => s.parse::<u64>().ok().map(Value::from),
        Value::Number(n) if n.is_i64() => s.parse::<i64>().ok().map(Value::from),
        Value::Number(_) => s.parse::<f64>().ok().and_then(|f| serde_json::Number::from_f64(f).map(Value::Number)),
        Value::String(_) => Some(Value::String(s.to_string())),
        // Unknown element type (empty list): accept numbers, else strings.
        _ => Some(
            s.parse::<u64>()
                .map(Value::from)
                .or_else(|_| s.parse::<f64>().map(Value::from))
                .unwrap_or_else(|_| Value::String(s.to_string())),
        ),
    }
}

fn parse_like(template: &Value, s: &str) -> Option<Value> {
    match template {
        Value::Array(items) => {
            if s.is_empty() {
                return Some(Value::Array(vec![]));
            }
            let elem = items.first().cloned().unwrap_or(Value::Null);
            s.split(',')
                .map(|p| parse_scalar(&elem, p.trim()))
                .collect::<Option<Vec<_>>>()
                .map(Value::Array)
        }
        other => parse_scalar(other, s),
    }
}
