//! End-to-end stages shared by the command-line driver and the test
//! suites: data generation, training, alignment, sampling, evaluation.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::align::{iterate_align, AlignConfig, AlignOutcome, AlignProblem};
use crate::config::RunConfig;
use crate::data::{self, DatasetEntry, SplitManifest};
use crate::denoiser::{init_params, pretrain_encoder, Conditioning, EncoderExample};
use crate::diffusion::{diffusion_losses, sample_cdr, train_diffusion};
use crate::error::{Error, Result};
use crate::eval::{mean_report, MetricRow};
use crate::model::{AminoAcid, CdrState, ComplexInstance, Design};
use crate::params::ParamStore;
use crate::rng;

pub const DATASET_FILE: &str = "complexes.jsonl";
pub const SPLIT_FILE: &str = "split.json";

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub entries: Vec<DatasetEntry>,
    pub split: SplitManifest,
}

impl Dataset {
    pub fn generate(cfg: &RunConfig) -> Result<Self> {
        let entries = data::generate_dataset(&cfg.data, rng::derive_seed(cfg.seed, "data", &[]))?;
        let ids: Vec<&str> = entries.iter().map(|e| e.complex.id.as_str()).collect();
        let split = SplitManifest::by_id_hash(&ids, cfg.data.n_train, cfg.data.n_val);
        Ok(Dataset { entries, split })
    }

    pub fn write(&self, dir: &Path, config_hash: &str) -> Result<()> {
        data::write_dataset(&dir.join(DATASET_FILE), &self.entries, Some(config_hash))?;
        let mut split = self.split.clone();
        split.config_hash = Some(config_hash.to_string());
        split.write(&dir.join(SPLIT_FILE))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(DATASET_FILE);
        if !path.exists() {
            return Err(Error::Data(format!("no dataset at {}", path.display())));
        }
        let entries = data::read_dataset(&path)?;
        let split = SplitManifest::read(&dir.join(SPLIT_FILE))?;
        Ok(Dataset { entries, split })
    }

    pub fn train(&self) -> Result<Vec<&DatasetEntry>> {
        data::select(&self.entries, &self.split.train)
    }

    pub fn val(&self) -> Result<Vec<&DatasetEntry>> {
        data::select(&self.entries, &self.split.val)
    }

    pub fn test(&self) -> Result<Vec<&DatasetEntry>> {
        data::select(&self.entries, &self.split.test)
    }

    pub fn get(&self, id: &str) -> Option<&DatasetEntry> {
        self.entries.iter().find(|e| e.complex.id == id)
    }
}

fn reference_of(e: &DatasetEntry) -> Result<&Design> {
    e.reference
        .as_ref()
        .ok_or_else(|| Error::Data(format!("complex {} has no reference CDR", e.complex.id)))
}

/// Full antibody chains with the CDR filled in from the references.
pub fn encoder_corpus(entries: &[&DatasetEntry]) -> Result<Vec<EncoderExample>> {
    entries
        .iter()
        .map(|e| {
            let (l, m) = e.complex.cdr_span();
            let cdr = reference_of(e)?;
            let sequence: Vec<AminoAcid> = e
                .complex
                .antibody_sequence()
                .iter()
                .enumerate()
                .map(|(i, a)| a.unwrap_or_else(|| cdr.cdr.residues[i - l].aa))
                .collect();
            Ok(EncoderExample {
                sequence,
                span: (l, m),
            })
        })
        .collect()
}

pub fn diffusion_corpus(entries: &[&DatasetEntry]) -> Result<Vec<(ComplexInstance, CdrState)>> {
    entries
        .iter()
        .map(|e| Ok((e.complex.clone(), reference_of(e)?.cdr.clone())))
        .collect()
}

pub fn initial_params(cfg: &RunConfig) -> Result<ParamStore> {
    init_params(&cfg.model, &mut rng::stream(cfg.seed, "init", &[]))
}

pub struct Trained {
    pub params: ParamStore,
    pub pretrain_curve: Vec<f64>,
    pub train_curve: Vec<f64>,
}

/// Masked-sequence pre-training of the encoder, then diffusion training of
/// everything else with the encoder frozen, both on the training split.
pub fn train(cfg: &RunConfig, data: &Dataset) -> Result<Trained> {
    let t = &cfg.train;
    let sched = cfg.schedule.build()?;
    let train = data.train()?;
    let params = initial_params(cfg)?;
    let corpus = encoder_corpus(&train)?;
    let (params, pretrain_curve) = pretrain_encoder(
        &params,
        &cfg.model,
        &corpus,
        t.pretrain_steps,
        t.pretrain_lr,
        t.pretrain_batch,
        &mut rng::stream(cfg.seed, "pretrain", &[]),
    )?;
    let (params, train_curve) = train_diffusion(
        &params,
        &cfg.model,
        &sched,
        &diffusion_corpus(&train)?,
        t.steps,
        t.lr,
        t.batch,
        &mut rng::stream(cfg.seed, "train", &[]),
    )?;
    Ok(Trained {
        params,
        pretrain_curve,
        train_curve,
    })
}

/// Mean `L_s + L_x + L_O` over `probes` fixed (complex, step, noise) draws.
pub fn probe_loss(cfg: &RunConfig, params: &ParamStore, corpus: &[(ComplexInstance, CdrState)], probes: usize, seed: u64) -> Result<f64> {
    use rand::Rng as _;
    let sched = cfg.schedule.build()?;
    let conds = corpus
        .iter()
        .map(|(c, _)| Conditioning::new(params, &cfg.model, c))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = rng::stream(seed, "probe", &[]);
    let mut total = 0.0;
    for _ in 0..probes {
        let i = rng.random_range(0..corpus.len());
        let t = rng.random_range(1..=sched.steps());
        let (ls, lx, lo) = diffusion_losses(params, &cfg.model, &conds[i], &corpus[i].1, t, &sched, &mut rng)?;
        total += ls + lx + lo;
    }
    Ok(total / probes.max(1) as f64)
}

/// Alignment variants compared in the ablation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlignVariant {
    /// Several online rounds with the reward margin.
    Iterative,
    /// One round with the reward margin.
    Single,
    /// One round without the margin.
    Dpo,
}

impl AlignVariant {
    pub fn label(self) -> &'static str {
        match self {
            AlignVariant::Iterative => "iterative-poea",
            AlignVariant::Single => "poea",
            AlignVariant::Dpo => "dpo",
        }
    }

    pub fn apply(self, base: &AlignConfig) -> AlignConfig {
        let mut a = base.clone();
        match self {
            AlignVariant::Iterative => {}
            AlignVariant::Single => a.iterations = 1,
            AlignVariant::Dpo => {
                a.iterations = 1;
                a.use_margin = false;
            }
        }
        a
    }
}

/// Aligns on the training split, selecting on the validation split.
pub fn align(cfg: &RunConfig, acfg: &AlignConfig, params_ref: &ParamStore, data: &Dataset) -> Result<AlignOutcome> {
    let sched = cfg.schedule.build()?;
    let prompts: Vec<ComplexInstance> = data.train()?.iter().map(|e| e.complex.clone()).collect();
    let validation: Vec<ComplexInstance> = data.val()?.iter().map(|e| e.complex.clone()).collect();
    let problem = AlignProblem {
        cfg: &cfg.model,
        sched: &sched,
        prompts: &prompts,
        validation: &validation,
    };
    iterate_align(params_ref, &problem, acfg, rng::derive_seed(cfg.seed, "align", &[]))
}

/// `n` designs per complex; design `k` of complex `i` uses the seed
/// `(seed, tag, i, k)`, so reruns and other policies share noise.
pub fn sample_designs(
    cfg: &RunConfig,
    params: &ParamStore,
    complexes: &[&ComplexInstance],
    n: usize,
    temperature: f64,
    tag: &str,
) -> Result<Vec<Design>> {
    let sched = cfg.schedule.build()?;
    let mut out = Vec::with_capacity(n * complexes.len());
    for (i, c) in complexes.iter().enumerate() {
        let cond = Conditioning::new(params, &cfg.model, c)?;
        for k in 0..n {
            let seed = rng::derive_seed(cfg.seed, tag, &[i as u64, k as u64]);
            out.push(sample_cdr(params, &cfg.model, &cond, c, &sched, temperature, seed)?);
        }
    }
    Ok(out)
}

/// One metric row per complex that has designs, in dataset order.
pub fn evaluate(label: &str, designs: &[Design], data: &Dataset) -> Result<Vec<MetricRow>> {
    let mut rows = Vec::new();
    for e in &data.entries {
        let mine: Vec<Design> = designs
            .iter()
            .filter(|d| d.complex_id == e.complex.id)
            .map(|d| {
                let mut d = d.clone();
                d.energies = Some(d.energies_for(&e.complex));
                d
            })
            .collect();
        if mine.is_empty() {
            continue;
        }
        let reference = reference_of(e)?.energies_for(&e.complex);
        rows.extend(MetricRow::compute(label, &e.complex.id, &mine, &reference));
    }
    for d in designs {
        if data.get(&d.complex_id).is_none() {
            return Err(Error::Data(format!("design for unknown complex {}", d.complex_id)));
        }
    }
    Ok(rows)
}

/// Mean interface energies of a design set, one point of a weight sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrontPoint {
    pub w_att: f64,
    pub w_rep: f64,
    pub mean_e_att: f64,
    pub mean_e_rep: f64,
}

pub const FRONT_HEADER: &str = "w_att,w_rep,mean_e_att,mean_e_rep";

impl FrontPoint {
    pub fn new(weights: (f64, f64), designs: &[Design], data: &Dataset) -> Result<Self> {
        let reports = designs
            .iter()
            .map(|d| {
                data.get(&d.complex_id)
                    .map(|e| d.energies_for(&e.complex))
                    .ok_or_else(|| Error::Data(format!("design for unknown complex {}", d.complex_id)))
            })
            .collect::<Result<Vec<_>>>()?;
        let m = mean_report(&reports);
        let s = weights.0 + weights.1;
        Ok(FrontPoint {
            w_att: weights.0 / s,
            w_rep: weights.1 / s,
            mean_e_att: m.e_att_total,
            mean_e_rep: m.e_rep_total,
        })
    }

    pub fn csv_line(&self) -> String {
        format!("{:.6},{:.6},{:.6},{:.6}", self.w_att, self.w_rep, self.mean_e_att, self.mean_e_rep)
    }
}
