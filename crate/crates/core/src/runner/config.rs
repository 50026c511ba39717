//! Experiment configuration: a JSON document layered over a named profile,
//! with dotted-path overrides from the command line.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::distribution::{make_params, DistributionParams, ParamOverrides};
use crate::trainer::{Algorithm, ModelKind, TrainerConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Profile {
    Theory,
    Desk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistributionConfig {
    pub d: usize,
    pub kappa: f64,
    pub q0: f64,
    #[serde(default)]
    pub p0: Option<f64>,
    #[serde(default)]
    pub r: Option<f64>,
    #[serde(default)]
    pub gamma0: Option<f64>,
    #[serde(default)]
    pub q_support: Option<usize>,
    /// Defaults to `round(d / kappa^2)`.
    #[serde(default)]
    pub n_train: Option<usize>,
    pub n_test: usize,
}

impl DistributionConfig {
    pub fn overrides(&self, model: ModelKind) -> ParamOverrides {
        let q_support = self.q_support.or(match model {
            ModelKind::Conv { k } if k > 1 => Some(self.d / k),
            _ => None,
        });
        ParamOverrides {
            p0: self.p0,
            q0: Some(self.q0),
            r: self.r,
            gamma0: self.gamma0,
            q_support,
        }
    }

    pub fn params(&self, model: ModelKind, seed: u64) -> crate::Result<DistributionParams> {
        make_params(self.d, self.kappa, self.q0, &self.overrides(model), seed)
    }
}

fn default_threshold() -> f64 {
    0.3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub profile: Profile,
    pub distribution: DistributionConfig,
    pub trainer: TrainerConfig,
    /// Algorithms to run; `[trainer.algorithm]` when empty.
    #[serde(default)]
    pub algorithms: Vec<Algorithm>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Subset loss below which a pattern counts as learned.
    #[serde(default = "default_threshold")]
    pub learning_order_threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub message: String,
    pub line: Option<usize>,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

impl ConfigError {
    fn new(message: impl Into<String>) -> Self {
        ConfigError {
            message: message.into(),
            line: None,
        }
    }
}

/// Default JSON for a profile. Every field is present, so a user config only
/// needs the fields it changes.
pub fn profile_defaults(profile: Profile) -> Value {
    match profile {
        Profile::Desk => json!({
            "profile": "Desk",
            "distribution": {
                "d": 48, "kappa": 0.5, "q0": 0.7, "p0": 0.2, "r": 0.9,
                "gamma0": null, "q_support": null, "n_train": null, "n_test": 2000
            },
            "trainer": {
                "m": 128, "w_fraction": 0.5,
                "eta1": 1.0, "eta2": 0.05, "lambda": 5e-4, "tau0": 0.3,
                "tau_xi": null, "epsilon1": 0.03, "epsilon2_prime": null,
                "max_iters": 60000, "eval_every": 500,
                "algorithm": "LargeThenAnneal",
                "mitigation": {"tau_act_init": 0.3, "tau_act_final": 0.0, "anneal_at": "LossThreshold"},
                "model": "BlockDense", "seed": 0
            },
            "algorithms": ["LargeThenAnneal", "SmallConstant", "MitigationNoise"],
            "seeds": [1, 2, 3, 4, 5],
            "output_dir": "runs/desk",
            "learning_order_threshold": 0.3
        }),
        Profile::Theory => {
            let d = 400.0f64;
            json!({
                "profile": "Theory",
                "distribution": {
                    "d": 400, "kappa": 0.5, "q0": 0.2, "p0": null, "r": null,
                    "gamma0": null, "q_support": null, "n_train": null, "n_test": 5000
                },
                "trainer": {
                    "m": 8192, "w_fraction": 0.5,
                    "eta1": 0.5, "eta2": 0.005, "lambda": d.powf(-1.25), "tau0": 0.01,
                    "tau_xi": null, "epsilon1": 0.01, "epsilon2_prime": null,
                    "max_iters": 200000, "eval_every": 100,
                    "algorithm": "LargeThenAnneal",
                    "mitigation": {"tau_act_init": 0.01, "tau_act_final": 0.0, "anneal_at": "LossThreshold"},
                    "model": "BlockDense", "seed": 0
                },
                "algorithms": ["LargeThenAnneal", "SmallConstant"],
                "seeds": [1, 2, 3, 4, 5],
                "output_dir": "runs/theory",
                "learning_order_threshold": 0.3
            })
        }
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

/// Parses an override value: JSON when it parses, otherwise a bare string.
fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Applies `path=value` to `doc`, creating intermediate objects.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<(), ConfigError> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| ConfigError::new(format!("override `{assignment}` is not of the form path=value")))?;
    let mut cur = doc;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(ConfigError::new(format!("empty segment in override path `{path}`")));
        }
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| ConfigError::new(format!("override path `{path}` walks into a non-object")))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), parse_value(raw));
            return Ok(());
        }
        cur = obj.entry(part.to_string()).or_insert_with(|| json!({}));
    }
    unreachable!()
}

/// Line (1-based) of the first occurrence of `"key"` in `text`.
fn line_of_key(text: &str, key: &str) -> Option<usize> {
    let needle = format!("\"{key}\"");
    text.lines().position(|l| l.contains(&needle)).map(|i| i + 1)
}

/// Line of a dotted path such as `trainer.eta1`: each key is searched after
/// the previous one. Unknown-field errors report the parent path, so the
/// deepest key found wins.
fn line_of_path(text: &str, path: &str) -> Option<usize> {
    let mut pos = 0;
    let mut found = None;
    for seg in path.split('.') {
        let seg = seg.split('[').next().unwrap_or(seg);
        if seg.is_empty() || seg == "?" {
            break;
        }
        match text[pos..].find(&format!("\"{seg}\"")) {
            Some(off) => {
                pos += off;
                found = Some(pos);
            }
            None => break,
        }
    }
    found.map(|p| text[..p].matches('\n').count() + 1)
}

/// Loads a config document from text: merge over the profile named in it
/// (Desk when absent), apply overrides, deserialize and validate.
pub fn load_str(text: &str, overrides: &[String]) -> Result<ExperimentConfig, ConfigError> {
    let user: Value = serde_json::from_str(text).map_err(|e| ConfigError {
        message: format!("invalid JSON: {e}"),
        line: Some(e.line()),
    })?;
    if !user.is_object() {
        return Err(ConfigError {
            message: "config must be a JSON object".into(),
            line: Some(1),
        });
    }
    let profile = match user.get("profile") {
        None => Profile::Desk,
        Some(v) => serde_json::from_value(v.clone()).map_err(|_| ConfigError {
            message: format!("unknown profile {v}; expected \"Desk\" or \"Theory\""),
            line: line_of_key(text, "profile"),
        })?,
    };
    let mut doc = profile_defaults(profile);
    merge(&mut doc, user);
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(doc).map_err(|e| {
        let path = e.path().to_string();
        ConfigError {
            line: line_of_path(text, &path),
            message: format!("{path}: {}", e.inner()),
        }
    })?;
    validate(&cfg).map_err(|(field, message)| ConfigError {
        line: line_of_key(text, field),
        message: format!("{field}: {message}"),
    })?;
    Ok(cfg)
}

pub fn load(path: &Path, overrides: &[String]) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::new(format!("cannot read {}: {e}", path.display())))?;
    load_str(&text, overrides)
}

fn validate(cfg: &ExperimentConfig) -> Result<(), (&'static str, String)> {
    if cfg.seeds.is_empty() {
        return Err(("seeds", "at least one seed is required".into()));
    }
    let mut s = cfg.seeds.clone();
    s.sort_unstable();
    s.dedup();
    if s.len() != cfg.seeds.len() {
        return Err(("seeds", "seeds must be distinct".into()));
    }
    if cfg.distribution.n_test < 1 {
        return Err(("n_test", "need at least one test example".into()));
    }
    if cfg.distribution.n_train == Some(0) {
        return Err(("n_train", "need at least one training example".into()));
    }
    if !(cfg.learning_order_threshold > 0.0) {
        return Err(("learning_order_threshold", "must be positive".into()));
    }
    cfg.trainer.validate().map_err(|e| ("trainer", e.to_string()))?;
    cfg.distribution
        .params(cfg.trainer.model, cfg.seeds[0])
        .map_err(|e| ("distribution", e.to_string()))?;
    let k = cfg.trainer.model.patches();
    if !cfg.distribution.d.is_multiple_of(k) || !cfg.trainer.m.is_multiple_of(k) {
        return Err(("model", format!("k = {k} must divide d and m")));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn algorithms(&self) -> Vec<Algorithm> {
        if self.algorithms.is_empty() {
            vec![self.trainer.algorithm]
        } else {
            self.algorithms.clone()
        }
    }

    /// Trainer settings for one `(algorithm, seed)` job.
    pub fn trainer_for(&self, algorithm: Algorithm, seed: u64) -> TrainerConfig {
        TrainerConfig {
            algorithm,
            seed,
            ..self.trainer.clone()
        }
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 over the compact JSON of everything except `output_dir`.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(o) = v.as_object_mut() {
            o.remove("output_dir");
        }
        hex::encode(Sha256::digest(v.to_string().as_bytes()))
    }
}
