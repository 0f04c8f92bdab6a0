//! Flat `section.key` run configuration with defaults, layered overrides and
//! a stable content hash.

use std::collections::BTreeMap;

use sha2::{Digest, Sha256};
use toml::Value;

use crate::error::{CliError, Result};

/// Environment variables `BETACRIT_<SECTION>__<KEY>` override config keys.
pub const ENV_PREFIX: &str = "BETACRIT_";

/// Bundled presets, addressable with `--preset NAME`.
pub const PRESETS: [(&str, &str); 2] = [
    ("appendix-d3", include_str!("../presets/appendix-d3.preset")),
    ("learned-split", include_str!("../presets/learned-split.preset")),
];

fn f(v: f64) -> Value {
    Value::Float(v)
}

fn i(v: i64) -> Value {
    Value::Integer(v)
}

fn floats(v: &[f64]) -> Value {
    Value::Array(v.iter().map(|&x| Value::Float(x)).collect())
}

/// Every recognised key with its default.
fn schema() -> Vec<(&'static str, Value)> {
    vec![
        // Joint-detached probe protocol (used by the endogenous run).
        ("probe.k_probe", i(10)),
        ("probe.lr_means", f(5e-3)),
        ("probe.lr_logbeta", f(1e-2)),
        ("probe.log_beta_init", f(-2.5)),
        // Learned-β toy runs (bimodal, unimodal); the passive split needs a
        // much larger means step than the detached protocol.
        ("toy.k_probe", i(8)),
        ("toy.lr_means", f(8.0)),
        ("toy.steps", i(1000)),
        // Synthetic data.
        ("data.n", i(2000)),
        ("data.separation", f(2.0)),
        ("data.std", f(1.0)),
        ("data.dim", i(2)),
        // Hessian calibration.
        ("calibrate.source", Value::String("bimodal".into())),
        ("calibrate.k", i(2)),
        ("calibrate.beta_lo", f(0.05)),
        ("calibrate.beta_hi", f(2.0)),
        // Hierarchical split.
        ("hierarchy.n", i(1000)),
        ("hierarchy.super_spacing", f(8.0)),
        ("hierarchy.sub_spacing", f(2.0)),
        ("hierarchy.std", f(0.5)),
        ("hierarchy.k", i(8)),
        ("hierarchy.steps", i(4000)),
        ("hierarchy.from_ratio", f(0.5)),
        ("hierarchy.to_ratio", f(2.5)),
        ("hierarchy.eta", f(1.0)),
        ("hierarchy.noise", f(1e-3)),
        // Forward split plus merge leg.
        ("reverse.n", i(1000)),
        ("reverse.k", i(8)),
        ("reverse.forward_levels", i(1000)),
        ("reverse.inner_steps", i(150)),
        ("reverse.lr", f(8.0)),
        ("reverse.noise", f(1e-4)),
        ("reverse.merge_fraction", f(0.1)),
        // Endogenous crossing.
        ("endogenous.n", i(1000)),
        ("endogenous.steps", i(1500)),
        ("endogenous.encoder_lr", f(0.02)),
        ("endogenous.weight_init", f(0.1)),
        ("endogenous.audit_window", i(100)),
        ("endogenous.audit_tolerance", f(1e-3)),
        // Normal-form simulators.
        ("sde.growth_rate", f(0.1)),
        ("sde.alpha", f(0.1)),
        ("sde.coupling", f(0.0)),
        ("sde.noise_intensity", f(0.0)),
        ("sde.dt", f(0.05)),
        ("sde.steps", i(2000)),
        ("sde.modes", i(1)),
        ("sde.dim", i(1)),
        ("sde.init_scale", f(0.01)),
        ("sde.initial_condition", Value::String("gaussian".into())),
        // Escape sweep.
        ("escape.gammas", floats(&[0.0, 0.1, 0.2, 0.3, 0.5, 0.7, 1.0])),
        ("escape.seeds_per_gamma", i(3)),
        ("escape.growth_rate", f(1e-4)),
        ("escape.alpha", f(1e-4)),
        ("escape.noise_intensity", f(1e-6)),
        ("escape.dt", f(0.01)),
        ("escape.init_scale", f(0.01)),
        ("escape.threshold", f(0.5)),
        ("escape.horizon", i(1_000_000)),
        ("escape.tilt_curvature", f(1.0)),
        ("escape.noise_free_control", Value::Boolean(true)),
        ("escape.weighting", Value::String("relative_error".into())),
        // Shape taxonomy.
        ("taxonomy.decoupling_threshold", f(0.5)),
        ("taxonomy.plateau_threshold", f(0.1)),
        ("taxonomy.descent_decades", f(0.5)),
        ("taxonomy.peak_band", f(0.1)),
        ("taxonomy.fold_min", f(0.2)),
        ("taxonomy.fold_min_points", i(5)),
    ]
}

/// The effective key-value document of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, Value>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            values: schema().into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        }
    }
}

/// Reads a raw override as a TOML value, falling back to a bare string.
fn parse_value(raw: &str) -> Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

fn type_name(v: &Value) -> &'static str {
    match v {
        Value::String(_) => "string",
        Value::Integer(_) => "integer",
        Value::Float(_) => "float",
        Value::Boolean(_) => "boolean",
        Value::Array(_) => "array",
        _ => "table",
    }
}

impl RunConfig {
    /// Sets one key, coercing integers to floats where a float is expected.
    pub fn set(&mut self, key: &str, value: Value, origin: &str) -> Result<()> {
        let current = self
            .values
            .get(key)
            .ok_or_else(|| CliError::Config(format!("unknown config key `{key}` in {origin}")))?;
        let coerced = match (current, value) {
            (Value::Float(_), Value::Integer(n)) => Value::Float(n as f64),
            (Value::Array(_), Value::Array(items)) => {
                let mut out = Vec::with_capacity(items.len());
                for item in items {
                    match item {
                        Value::Float(x) => out.push(Value::Float(x)),
                        Value::Integer(n) => out.push(Value::Float(n as f64)),
                        other => {
                            return Err(CliError::Config(format!(
                                "`{key}` in {origin} must be an array of numbers, found {}",
                                type_name(&other)
                            )))
                        }
                    }
                }
                Value::Array(out)
            }
            (cur, v) if std::mem::discriminant(cur) == std::mem::discriminant(&v) => v,
            (cur, v) => {
                return Err(CliError::Config(format!(
                    "`{key}` in {origin} must be {}, found {}",
                    type_name(cur),
                    type_name(&v)
                )))
            }
        };
        if let Value::Integer(n) = coerced {
            if n < 0 {
                return Err(CliError::Config(format!("`{key}` in {origin} must be non-negative")));
            }
        }
        self.values.insert(key.to_string(), coerced);
        Ok(())
    }

    /// Merges a sectioned TOML document; every key must live in a section.
    pub fn merge_toml(&mut self, text: &str, origin: &str) -> Result<()> {
        let table: toml::Table =
            toml::from_str(text).map_err(|e| CliError::Config(format!("cannot parse {origin}: {e}")))?;
        for (section, body) in table {
            let Value::Table(body) = body else {
                return Err(CliError::Config(format!(
                    "top-level key `{section}` in {origin} must be a [section]"
                )));
            };
            for (key, value) in body {
                self.set(&format!("{section}.{key}"), value, origin)?;
            }
        }
        Ok(())
    }

    pub fn apply_preset(&mut self, name: &str) -> Result<()> {
        let (_, text) = PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| CliError::Config(format!("unknown preset `{name}`")))?;
        self.merge_toml(text, &format!("preset `{name}`"))
    }

    /// Applies `BETACRIT_<SECTION>__<KEY>=value` overrides.
    pub fn apply_env<I: IntoIterator<Item = (String, String)>>(&mut self, vars: I) -> Result<()> {
        let mut pending: Vec<(String, String, String)> = Vec::new();
        for (name, raw) in vars {
            let Some(rest) = name.strip_prefix(ENV_PREFIX) else {
                continue;
            };
            let Some((section, key)) = rest.split_once("__") else {
                return Err(CliError::Config(format!(
                    "environment variable `{name}` must look like {ENV_PREFIX}<SECTION>__<KEY>"
                )));
            };
            pending.push((format!("{}.{}", section.to_lowercase(), key.to_lowercase()), raw, name));
        }
        pending.sort();
        for (key, raw, name) in pending {
            self.set(&key, parse_value(&raw), &format!("environment variable `{name}`"))?;
        }
        Ok(())
    }

    /// Applies a `section.key=value` assignment from the command line.
    pub fn apply_assignment(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("`--set {assignment}` must look like section.key=value")))?;
        self.set(key.trim(), parse_value(raw.trim()), "--set")
    }

    fn get(&self, key: &str) -> &Value {
        self.values
            .get(key)
            .unwrap_or_else(|| panic!("config key `{key}` is not in the schema"))
    }

    pub fn f64(&self, key: &str) -> f64 {
        match self.get(key) {
            Value::Float(x) => *x,
            Value::Integer(n) => *n as f64,
            other => panic!("`{key}` is {}", type_name(other)),
        }
    }

    pub fn usize(&self, key: &str) -> usize {
        match self.get(key) {
            Value::Integer(n) => *n as usize,
            other => panic!("`{key}` is {}", type_name(other)),
        }
    }

    pub fn bool(&self, key: &str) -> bool {
        matches!(self.get(key), Value::Boolean(true))
    }

    pub fn str(&self, key: &str) -> &str {
        match self.get(key) {
            Value::String(s) => s,
            other => panic!("`{key}` is {}", type_name(other)),
        }
    }

    pub fn f64_list(&self, key: &str) -> Vec<f64> {
        match self.get(key) {
            Value::Array(items) => items.iter().filter_map(Value::as_float).collect(),
            other => panic!("`{key}` is {}", type_name(other)),
        }
    }

    /// `key = value` lines in key order.
    pub fn canonical(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// SHA-256 of [`RunConfig::canonical`], hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }
}
