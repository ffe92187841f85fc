//! Run configuration with a flat, dotted key set.
//!
//! A config file is TOML. Keys may be written dotted (`train.lr = 0.01`) or
//! inside tables (`[train]` then `lr = 0.01`); both flatten to the same key.
//! `--set key=value` overrides are applied after the file, in order.

use std::path::Path;

use bias_align::model::{Head, Objective, TrainConfig};
use bias_align::synth::SynthConfig;
use serde::{Deserialize, Serialize};
use toml::Value;

use crate::error::CliError;

/// Evaluation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub bins: usize,
    pub head: Head,
    pub val_fraction: f64,
    pub split_seed: u64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            bins: bias_align::metrics::DEFAULT_BINS,
            head: Head::Embedding,
            val_fraction: bias_align::metrics::DEFAULT_VAL_FRACTION,
            split_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub synth: SynthConfig,
    pub train: TrainConfig,
    pub eval: EvalSettings,
}

/// Every accepted key with its meaning. Defaults come from [`RunConfig::default`].
pub const KEYS: &[(&str, &str)] = &[
    ("synth.dim", "embedding dimension d"),
    (
        "synth.domains",
        "number of seen domains; one held-out domain is added",
    ),
    ("synth.per_group", "samples per (domain, label) group"),
    (
        "synth.class_index",
        "coordinate axis of the class direction",
    ),
    ("synth.class_norm", "length of the class direction"),
    ("synth.offset", "seen-domain offset magnitude"),
    (
        "synth.unseen_offset_factor",
        "held-out offset magnitude as a multiple of synth.offset",
    ),
    ("synth.noise", "within-group Gaussian noise scale"),
    (
        "synth.anchor_tilt",
        "tilt of the spoof anchor away from the live anchor's antipode",
    ),
    ("synth.seed", "generator seed"),
    ("train.objective", "erm, erm+irm or gdfas"),
    ("train.lr", "SGD learning rate"),
    ("train.momentum", "SGD momentum in [0, 1); 0 is plain SGD"),
    (
        "train.epochs",
        "number of epochs (for --resume: the epoch to stop at)",
    ),
    ("train.quota", "samples drawn per group in each batch"),
    (
        "train.seed",
        "seed for initialization, batch order and view noise",
    ),
    ("train.logit_scale", "scale applied to cosine logits"),
    (
        "gs.enabled",
        "apply group-wise scaling to the image-text loss",
    ),
    (
        "gs.alpha",
        "estimator temperature; \"auto\" is ln(groups)/2",
    ),
    (
        "gs.beta",
        "estimator range; weights lie in (1 - beta/2, 1 + beta/2)",
    ),
    ("gs.apply_to_class", "also scale the classifier-head loss"),
    (
        "fod.enabled",
        "add the domain-supervised loss on specific features",
    ),
    ("fod.lambda", "weight of the specific-feature loss"),
    ("fod.tau", "temperature of the specific-feature loss"),
    (
        "fod.normalize",
        "L2-normalize specific features before the dot products",
    ),
    ("ii.lambda", "weight of the paired-view loss"),
    ("ii.tau", "temperature of the paired-view loss"),
    ("ii.sigma_aug", "noise scale of the second view"),
    ("irm.lambda", "weight of the IRM penalty (erm+irm only)"),
    ("eval.bins", "number of calibration bins"),
    ("eval.head", "embedding or classifier"),
    (
        "eval.val_fraction",
        "validation share of the calibration split",
    ),
    ("eval.split_seed", "seed of the calibration split"),
];

fn bad(key: &str, want: &str, got: &Value) -> CliError {
    CliError::Config(format!("{key}: expected {want}, got {got}"))
}

fn as_f64(key: &str, v: &Value) -> Result<f64, CliError> {
    match v {
        Value::Float(f) => Ok(*f),
        Value::Integer(i) => Ok(*i as f64),
        _ => Err(bad(key, "a number", v)),
    }
}

fn as_u64(key: &str, v: &Value) -> Result<u64, CliError> {
    match v {
        Value::Integer(i) if *i >= 0 => Ok(*i as u64),
        _ => Err(bad(key, "a non-negative integer", v)),
    }
}

fn as_usize(key: &str, v: &Value) -> Result<usize, CliError> {
    as_u64(key, v).map(|x| x as usize)
}

fn as_bool(key: &str, v: &Value) -> Result<bool, CliError> {
    v.as_bool().ok_or_else(|| bad(key, "true or false", v))
}

fn as_str<'a>(key: &str, v: &'a Value) -> Result<&'a str, CliError> {
    v.as_str().ok_or_else(|| bad(key, "a string", v))
}

impl RunConfig {
    /// Defaults, then `path` if given, then each `key=value` override.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut config = RunConfig::default();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Io(bias_align::Error::io(path, e)))?;
            config.apply_toml(&text)?;
        }
        for o in overrides {
            let (key, value) = o
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("override '{o}' is not key=value")))?;
            config.set(key.trim(), &parse_value(value.trim()))?;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn apply_toml(&mut self, text: &str) -> Result<(), CliError> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| CliError::Config(format!("config file: {e}")))?;
        let mut flat = Vec::new();
        flatten("", &Value::Table(table), &mut flat);
        for (k, v) in flat {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, v: &Value) -> Result<(), CliError> {
        let (s, t, e) = (&mut self.synth, &mut self.train, &mut self.eval);
        match key {
            "synth.dim" => s.dim = as_usize(key, v)?,
            "synth.domains" => s.domains = as_usize(key, v)?,
            "synth.per_group" => s.per_group = as_usize(key, v)?,
            "synth.class_index" => s.class_index = as_usize(key, v)?,
            "synth.class_norm" => s.class_norm = as_f64(key, v)?,
            "synth.offset" => s.offset = as_f64(key, v)?,
            "synth.unseen_offset_factor" => s.unseen_offset_factor = as_f64(key, v)?,
            "synth.noise" => s.noise = as_f64(key, v)?,
            "synth.anchor_tilt" => s.anchor_tilt = as_f64(key, v)?,
            "synth.seed" => s.seed = as_u64(key, v)?,
            "train.objective" => {
                t.objective = as_str(key, v)?
                    .parse::<Objective>()
                    .map_err(|err| CliError::Config(format!("{key}: {err}")))?
            }
            "train.lr" => t.learning_rate = as_f64(key, v)?,
            "train.momentum" => t.momentum = as_f64(key, v)?,
            "train.epochs" => t.epochs = as_usize(key, v)?,
            "train.quota" => t.quota = as_usize(key, v)?,
            "train.seed" => t.seed = as_u64(key, v)?,
            "train.logit_scale" => t.logit_scale = as_f64(key, v)?,
            "gs.enabled" => t.gs_enabled = as_bool(key, v)?,
            "gs.alpha" => {
                t.gs_alpha = match v {
                    Value::String(s) if s == "auto" => None,
                    _ => Some(as_f64(key, v)?),
                }
            }
            "gs.beta" => t.gs_beta = as_f64(key, v)?,
            "gs.apply_to_class" => t.gs_apply_to_class = as_bool(key, v)?,
            "fod.enabled" => t.fod_enabled = as_bool(key, v)?,
            "fod.lambda" => t.lambda_fod = as_f64(key, v)?,
            "fod.tau" => t.tau_fod = as_f64(key, v)?,
            "fod.normalize" => t.fod_normalize = as_bool(key, v)?,
            "ii.lambda" => t.lambda_ii = as_f64(key, v)?,
            "ii.tau" => t.tau_ii = as_f64(key, v)?,
            "ii.sigma_aug" => t.sigma_aug = as_f64(key, v)?,
            "irm.lambda" => t.lambda_irm = as_f64(key, v)?,
            "eval.bins" => e.bins = as_usize(key, v)?,
            "eval.head" => {
                e.head = as_str(key, v)?
                    .parse::<Head>()
                    .map_err(|err| CliError::Config(format!("{key}: {err}")))?
            }
            "eval.val_fraction" => e.val_fraction = as_f64(key, v)?,
            "eval.split_seed" => e.split_seed = as_u64(key, v)?,
            _ => return Err(CliError::Config(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    /// Current value of `key`, for echoing.
    pub fn get(&self, key: &str) -> Option<Value> {
        let (s, t, e) = (&self.synth, &self.train, &self.eval);
        let f = Value::Float;
        let u = |x: u64| Value::Integer(x as i64);
        Some(match key {
            "synth.dim" => u(s.dim as u64),
            "synth.domains" => u(s.domains as u64),
            "synth.per_group" => u(s.per_group as u64),
            "synth.class_index" => u(s.class_index as u64),
            "synth.class_norm" => f(s.class_norm),
            "synth.offset" => f(s.offset),
            "synth.unseen_offset_factor" => f(s.unseen_offset_factor),
            "synth.noise" => f(s.noise),
            "synth.anchor_tilt" => f(s.anchor_tilt),
            "synth.seed" => u(s.seed),
            "train.objective" => Value::String(t.objective.as_str().into()),
            "train.lr" => f(t.learning_rate),
            "train.momentum" => f(t.momentum),
            "train.epochs" => u(t.epochs as u64),
            "train.quota" => u(t.quota as u64),
            "train.seed" => u(t.seed),
            "train.logit_scale" => f(t.logit_scale),
            "gs.enabled" => Value::Boolean(t.gs_enabled),
            "gs.alpha" => t.gs_alpha.map_or_else(|| Value::String("auto".into()), f),
            "gs.beta" => f(t.gs_beta),
            "gs.apply_to_class" => Value::Boolean(t.gs_apply_to_class),
            "fod.enabled" => Value::Boolean(t.fod_enabled),
            "fod.lambda" => f(t.lambda_fod),
            "fod.tau" => f(t.tau_fod),
            "fod.normalize" => Value::Boolean(t.fod_normalize),
            "ii.lambda" => f(t.lambda_ii),
            "ii.tau" => f(t.tau_ii),
            "ii.sigma_aug" => f(t.sigma_aug),
            "irm.lambda" => f(t.lambda_irm),
            "eval.bins" => u(e.bins as u64),
            "eval.head" => Value::String(e.head.to_string()),
            "eval.val_fraction" => f(e.val_fraction),
            "eval.split_seed" => u(e.split_seed),
            _ => return None,
        })
    }

    /// `key = value` lines for every key, in [`KEYS`] order.
    pub fn lines(&self) -> Vec<String> {
        KEYS.iter()
            .map(|(k, _)| format!("{k} = {}", self.get(k).expect("every listed key resolves")))
            .collect()
    }

    pub fn to_toml(&self) -> String {
        let mut out = String::new();
        for line in self.lines() {
            out.push_str(&line);
            out.push('\n');
        }
        out
    }

    /// Flat key → value map for JSON outputs.
    pub fn to_json(&self) -> serde_json::Value {
        let map = KEYS
            .iter()
            .map(|(k, _)| {
                let v = serde_json::to_value(self.get(k).expect("every listed key resolves"))
                    .expect("toml values serialize");
                (k.to_string(), v)
            })
            .collect();
        serde_json::Value::Object(map)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.synth.validate()?;
        self.train.validate()?;
        if self.eval.bins == 0 {
            return Err(CliError::Config("eval.bins must be >= 1".into()));
        }
        if !(self.eval.val_fraction > 0.0 && self.eval.val_fraction < 1.0) {
            return Err(CliError::Config(format!(
                "eval.val_fraction must be in (0, 1), got {}",
                self.eval.val_fraction
            )));
        }
        Ok(())
    }
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, Value)>) {
    match v {
        Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, v, out);
            }
        }
        _ => out.push((prefix.to_string(), v.clone())),
    }
}

/// Parses an override value as a TOML value, falling back to a bare string.
fn parse_value(text: &str) -> Value {
    format!("v = {text}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(text.to_string()))
}
