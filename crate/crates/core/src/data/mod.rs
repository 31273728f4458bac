//! Synthetic complexes, annealed reference loops and dataset files.

mod anneal;
mod gen;
mod io;

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use anneal::{connectivity_penalty, gen_reference_cdr, initial_loop, objective};
pub use gen::{gen_complex, GenParams, CA_SPACING};
pub use io::{read_dataset, read_designs, write_dataset, write_designs, DatasetEntry, ORIENT_TOLERANCE};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub anneal_steps: usize,
    pub gen: GenParams,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            n_train: 8,
            n_val: 2,
            n_test: 2,
            anneal_steps: 20_000,
            gen: GenParams::default(),
        }
    }
}

impl DataConfig {
    pub fn n_complexes(&self) -> usize {
        self.n_train + self.n_val + self.n_test
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 {
            return Err(Error::Config("data.n_train must be positive".into()));
        }
        self.gen.validate()
    }
}

pub fn complex_id(index: usize) -> String {
    format!("cx{index:03}")
}

/// Generates every complex and its annealed reference. Complex `i` uses the
/// substream `("complex", i)` of `seed` and its reference `("anneal", i)`.
pub fn generate_dataset(cfg: &DataConfig, seed: u64) -> Result<Vec<DatasetEntry>> {
    cfg.validate()?;
    (0..cfg.n_complexes())
        .map(|i| {
            let id = complex_id(i);
            let complex = gen_complex(&id, &cfg.gen, rng::derive_seed(seed, "complex", &[i as u64]))?;
            let reference = gen_reference_cdr(&complex, rng::derive_seed(seed, "anneal", &[i as u64]), cfg.anneal_steps);
            Ok(DatasetEntry {
                complex,
                reference: Some(reference),
            })
        })
        .collect()
}

/// Split membership by complex id.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitManifest {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

fn id_hash(id: &str) -> [u8; 32] {
    Sha256::digest(id.as_bytes()).into()
}

impl SplitManifest {
    /// Orders ids by their SHA-256 digest and cuts train, val, test in turn;
    /// whatever is left past the three counts goes to test.
    pub fn by_id_hash<S: AsRef<str>>(ids: &[S], n_train: usize, n_val: usize) -> Self {
        let mut order: Vec<(&str, [u8; 32])> = ids.iter().map(|s| (s.as_ref(), id_hash(s.as_ref()))).collect();
        order.sort_by(|a, b| a.1.cmp(&b.1).then(a.0.cmp(b.0)));
        let names: Vec<String> = order.into_iter().map(|(s, _)| s.to_string()).collect();
        let a = n_train.min(names.len());
        let b = (a + n_val).min(names.len());
        SplitManifest {
            train: names[..a].to_vec(),
            val: names[a..b].to_vec(),
            test: names[b..].to_vec(),
            config_hash: None,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Data(e.to_string()))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Malformed {
            path: path.to_path_buf(),
            line: e.line(),
            msg: e.to_string(),
        })
    }
}

/// Picks the entries named in `ids`, in that order.
pub fn select<'a>(entries: &'a [DatasetEntry], ids: &[String]) -> Result<Vec<&'a DatasetEntry>> {
    ids.iter()
        .map(|id| {
            entries
                .iter()
                .find(|e| &e.complex.id == id)
                .ok_or_else(|| Error::Data(format!("complex {id} listed in the split is missing from the dataset")))
        })
        .collect()
}

#[cfg(test)]
mod tests;
