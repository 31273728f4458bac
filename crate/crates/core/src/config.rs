//! Run configuration: one JSON document, every section optional except
//! the seed. Command-line overrides are dotted key paths applied on top of
//! the file before defaults fill the gaps.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::align::AlignConfig;
use crate::data::DataConfig;
use crate::denoiser::DenoiserConfig;
use crate::error::{Error, Result};
use crate::NoiseSchedule;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub s: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig { steps: 100, s: 0.01 }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::cosine(self.steps, self.s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub pretrain_steps: usize,
    pub pretrain_lr: f64,
    pub pretrain_batch: usize,
    pub steps: usize,
    pub lr: f64,
    pub batch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            pretrain_steps: 500,
            pretrain_lr: 1e-3,
            pretrain_batch: 8,
            steps: 2000,
            lr: 1e-3,
            batch: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Designs sampled per complex.
    pub n_samples: usize,
    pub temperature: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            n_samples: 64,
            temperature: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub dataset: PathBuf,
    pub checkpoints: PathBuf,
    pub reports: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            dataset: "out/data".into(),
            checkpoints: "out/checkpoints".into(),
            reports: "out/reports".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Root of every random stream. Required.
    pub seed: u64,
    #[serde(default)]
    pub paths: Paths,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub model: DenoiserConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub align: AlignConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

fn sha_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Parses an override value as JSON, falling back to a bare string.
fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Sets `a.b.c = value` inside `doc`, creating objects on the way.
pub fn set_path(doc: &mut Value, key: &str, value: Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad config key `{key}`")));
    }
    let mut cur = doc;
    for p in &parts[..parts.len() - 1] {
        if !cur.is_object() {
            return Err(Error::Config(format!("config key `{key}`: `{p}` is not a section")));
        }
        cur = cur
            .as_object_mut()
            .expect("checked object")
            .entry(p.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    match cur.as_object_mut() {
        Some(obj) => {
            obj.insert(parts[parts.len() - 1].to_string(), value);
            Ok(())
        }
        None => Err(Error::Config(format!("config key `{key}`: parent is not a section"))),
    }
}

impl RunConfig {
    /// Default configuration for `seed`.
    pub fn with_seed(seed: u64) -> Self {
        RunConfig {
            seed,
            paths: Paths::default(),
            data: DataConfig::default(),
            schedule: ScheduleConfig::default(),
            model: DenoiserConfig::default(),
            train: TrainConfig::default(),
            align: AlignConfig::default(),
            eval: EvalConfig::default(),
        }
    }

    /// Builds a configuration from an optional file plus `key=value`
    /// overrides (flag > file > default).
    pub fn load(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut doc = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => Value::Object(Default::default()),
        };
        if !doc.is_object() {
            return Err(Error::Config("config must be a JSON object".into()));
        }
        for (k, v) in overrides {
            set_path(&mut doc, k, parse_value(v))?;
        }
        let cfg: RunConfig = serde_json::from_value(doc).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.model.validate()?;
        self.align.validate()?;
        self.schedule.build()?;
        if !(self.eval.temperature > 0.0) {
            return Err(Error::Config("eval.temperature must be positive".into()));
        }
        let t = &self.train;
        if !(t.lr > 0.0 && t.pretrain_lr > 0.0) || t.batch == 0 || t.pretrain_batch == 0 {
            return Err(Error::Config("train learning rates and batch sizes must be positive".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        sha_hex(serde_json::to_string(self).expect("config serialises").as_bytes())
    }

    /// Hash of the sections that fix parameter shapes and the diffusion
    /// chain; checkpoints are only usable under a matching model hash.
    pub fn model_hash(&self) -> String {
        let v = serde_json::json!({ "model": self.model, "schedule": self.schedule });
        sha_hex(v.to_string().as_bytes())
    }
}
