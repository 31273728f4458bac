//! Checkpoint directory: `manifest.json` (names, shapes, hashes, schedule,
//! RNG state) and `params.bin` (little-endian f64 in manifest order).

use std::path::Path;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, ScheduleConfig};
use crate::denoiser::DenoiserConfig;
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::rng::Rng;
use crate::tape::Tensor;

pub const FORMAT: &str = "cdrdiff-checkpoint/1";
pub const MANIFEST: &str = "manifest.json";
pub const BLOB: &str = "params.bin";

/// Position of a ChaCha stream, enough to resume it exactly.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RngState {
    pub seed: String,
    pub stream: u64,
    /// Decimal, since JSON numbers cannot hold a u128.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &Rng) -> Self {
        RngState {
            seed: rng.get_seed().iter().map(|b| format!("{b:02x}")).collect(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<Rng> {
        let bad = || Error::Data("checkpoint rng state is malformed".into());
        if self.seed.len() != 64 {
            return Err(bad());
        }
        let mut seed = [0u8; 32];
        for (k, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&self.seed[2 * k..2 * k + 2], 16).map_err(|_| bad())?;
        }
        let mut rng = Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse().map_err(|_| bad())?);
        Ok(rng)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamEntry {
    name: String,
    shape: [usize; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    config_hash: String,
    model_hash: String,
    model: DenoiserConfig,
    schedule: ScheduleConfig,
    rng: Option<RngState>,
    params: Vec<ParamEntry>,
    blob: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ParamStore,
    pub model: DenoiserConfig,
    pub schedule: ScheduleConfig,
    pub config_hash: String,
    pub model_hash: String,
    pub rng: Option<RngState>,
}

impl Checkpoint {
    pub fn new(params: ParamStore, cfg: &RunConfig, rng: Option<&Rng>) -> Self {
        Checkpoint {
            params,
            model: cfg.model.clone(),
            schedule: cfg.schedule.clone(),
            config_hash: cfg.hash(),
            model_hash: cfg.model_hash(),
            rng: rng.map(RngState::capture),
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest = Manifest {
            format: FORMAT.into(),
            config_hash: self.config_hash.clone(),
            model_hash: self.model_hash.clone(),
            model: self.model.clone(),
            schedule: self.schedule.clone(),
            rng: self.rng.clone(),
            params: self
                .params
                .iter()
                .map(|(name, t)| ParamEntry {
                    name: name.to_string(),
                    shape: [t.rows, t.cols],
                })
                .collect(),
            blob: BLOB.into(),
        };
        let mut blob = Vec::with_capacity(8 * self.params.num_scalars());
        for (_, t) in self.params.iter() {
            for v in &t.data {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Data(e.to_string()))?;
        let mp = dir.join(MANIFEST);
        std::fs::write(&mp, text + "\n").map_err(|e| Error::io(&mp, e))?;
        let bp = dir.join(BLOB);
        std::fs::write(&bp, blob).map_err(|e| Error::io(&bp, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mp = dir.join(MANIFEST);
        let text = std::fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::Malformed {
            path: mp.clone(),
            line: e.line(),
            msg: e.to_string(),
        })?;
        if m.format != FORMAT {
            return Err(Error::Data(format!("{}: unknown checkpoint format {}", mp.display(), m.format)));
        }
        let bp = dir.join(&m.blob);
        let bytes = std::fs::read(&bp).map_err(|e| Error::io(&bp, e))?;
        let expected: usize = m.params.iter().map(|p| p.shape[0] * p.shape[1]).sum();
        if bytes.len() != 8 * expected {
            return Err(Error::Data(format!(
                "{}: {} bytes, manifest needs {}",
                bp.display(),
                bytes.len(),
                8 * expected
            )));
        }
        let mut values = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
        let mut params = ParamStore::default();
        for p in &m.params {
            let data: Vec<f64> = values.by_ref().take(p.shape[0] * p.shape[1]).collect();
            params.insert(&p.name, Tensor::from_vec(p.shape[0], p.shape[1], data));
        }
        if !params.all_finite() {
            return Err(Error::Numeric(format!("{}: non-finite parameters", bp.display())));
        }
        Ok(Checkpoint {
            params,
            model: m.model,
            schedule: m.schedule,
            config_hash: m.config_hash,
            model_hash: m.model_hash,
            rng: m.rng,
        })
    }

    /// Refuses a checkpoint built for a different model or schedule.
    pub fn check_compatible(&self, cfg: &RunConfig) -> Result<()> {
        if self.model_hash != cfg.model_hash() {
            return Err(Error::Config(format!(
                "checkpoint model hash {} does not match the configuration's {}",
                &self.model_hash[..12.min(self.model_hash.len())],
                &cfg.model_hash()[..12]
            )));
        }
        Ok(())
    }
}
