//! Preference construction, DPO/POEA losses on the diffusion policy and
//! the iterative online alignment driver.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::denoiser::{is_encoder_param, loss_and_grad, non_finite, Adam, Conditioning, DenoiserConfig};
use crate::diffusion::{noise_pair, sample_cdr, step_log_prob, step_log_prob_node};
use crate::energy::{collective_reward, reward_margin, rewards, RewardVector, Weights};
use crate::error::{Error, Result};
use crate::model::{ComplexInstance, Design};
use crate::params::ParamStore;
use crate::rng::{self, Rng};
use crate::schedule::NoiseSchedule;
use crate::tape::{log_sigmoid, Graph, NodeId};

/// Collective rewards closer than this are treated as ties.
pub const TIE_TOLERANCE: f64 = 1e-9;

/// Bradley-Terry preference probability `sigmoid(r1 - r2)`.
pub fn bt_prob(r1: f64, r2: f64) -> f64 {
    log_sigmoid(r1 - r2).exp()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignConfig {
    /// KL-regularisation strength.
    pub beta: f64,
    /// Objective weights as an `att:rep` ratio.
    pub weights: (f64, f64),
    pub iterations: usize,
    /// Prompts sampled per iteration; `0` uses every training complex.
    pub prompts_per_iter: usize,
    pub samples_per_prompt: usize,
    pub steps_per_iter: usize,
    pub batch: usize,
    pub temp0: f64,
    pub temp_decay: f64,
    pub lr: f64,
    pub clip_norm: f64,
    /// Apply the log reward margin (POEA); `false` gives plain DPO.
    pub use_margin: bool,
    pub val_samples: usize,
}

impl Default for AlignConfig {
    fn default() -> Self {
        AlignConfig {
            beta: 100.0,
            weights: (1.0, 3.0),
            iterations: 3,
            prompts_per_iter: 0,
            samples_per_prompt: 16,
            steps_per_iter: 500,
            batch: 8,
            temp0: 1.5,
            temp_decay: 0.9,
            lr: 1e-5,
            clip_norm: 100.0,
            use_margin: true,
            val_samples: 64,
        }
    }
}

impl AlignConfig {
    pub fn weight_vector(&self) -> Result<Weights> {
        Weights::from_ratio(self.weights.0, self.weights.1)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0) {
            return Err(Error::Config(format!("align.beta must be positive, got {}", self.beta)));
        }
        self.weight_vector()?;
        if !(self.temp0 >= 1.0) {
            return Err(Error::Config(format!("align.temp0 must be at least 1, got {}", self.temp0)));
        }
        if !(self.temp_decay > 0.0 && self.temp_decay <= 1.0) {
            return Err(Error::Config(format!("align.temp_decay must lie in (0, 1], got {}", self.temp_decay)));
        }
        if self.samples_per_prompt < 2 {
            return Err(Error::Config("align.samples_per_prompt must be at least 2".into()));
        }
        if self.batch == 0 || self.val_samples == 0 {
            return Err(Error::Config("align.batch and align.val_samples must be positive".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config("align.lr must be positive".into()));
        }
        Ok(())
    }
}

/// `1 + (temp0 - 1) gamma^k`.
pub fn temperature_at(iter: usize, cfg: &AlignConfig) -> f64 {
    1.0 + (cfg.temp0 - 1.0) * cfg.temp_decay.powi(iter as i32)
}

/// A design with its per-objective rewards and collective reward.
///
/// `shift` is an input-dependent additive term of the collective reward;
/// it is kept apart from `rhat` so that it cancels exactly in every
/// pairwise difference.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredDesign {
    pub design: Design,
    pub rewards: RewardVector,
    pub rhat: f64,
    pub shift: f64,
}

impl ScoredDesign {
    pub fn new(design: Design, complex: &ComplexInstance, w: &Weights) -> Result<Self> {
        let report = design.energies_for(complex);
        let r = rewards(&report);
        let rhat = collective_reward(&r, w)?;
        Ok(ScoredDesign {
            design,
            rewards: r,
            rhat,
            shift: 0.0,
        })
    }

    /// Collective-reward difference `self - other`.
    pub fn advantage_over(&self, other: &ScoredDesign) -> f64 {
        (self.rhat - other.rhat) + (self.shift - other.shift)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PreferenceRecord {
    pub complex_id: String,
    pub y_w: Design,
    pub y_l: Design,
    pub r_w: RewardVector,
    pub r_l: RewardVector,
    pub rhat_w: f64,
    pub rhat_l: f64,
    pub margin: f64,
}

/// Random disjoint pairing of one complex's samples; the pair member with
/// the higher collective reward wins, ties are dropped.
pub fn build_preferences(samples: &[ScoredDesign], rng: &mut Rng) -> Result<Vec<PreferenceRecord>> {
    if samples.len() < 2 {
        return Err(Error::Config("preference construction needs at least two samples".into()));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(rng);
    let mut out = Vec::with_capacity(samples.len() / 2);
    for pair in order.chunks_exact(2) {
        let (a, b) = (&samples[pair[0]], &samples[pair[1]]);
        let adv = a.advantage_over(b);
        if adv.abs() <= TIE_TOLERANCE {
            continue;
        }
        let (w, l, diff) = if adv > 0.0 { (a, b, adv) } else { (b, a, -adv) };
        out.push(PreferenceRecord {
            complex_id: w.design.complex_id.clone(),
            y_w: w.design.clone(),
            y_l: l.design.clone(),
            r_w: w.rewards,
            r_l: l.rewards,
            rhat_w: w.rhat,
            rhat_l: l.rhat,
            margin: reward_margin(diff, 0.0)?,
        });
    }
    if out.is_empty() {
        log::warn!("every sampled pair was tied; no preference records built");
    }
    Ok(out)
}

/// Loss `-log sigmoid(beta T [dw - dl] - margin)` from the four step
/// log-probabilities.
pub fn preference_loss_value(
    lp_theta_w: f64,
    lp_ref_w: f64,
    lp_theta_l: f64,
    lp_ref_l: f64,
    beta: f64,
    t_steps: usize,
    margin: f64,
) -> f64 {
    let z = beta * t_steps as f64 * ((lp_theta_w - lp_ref_w) - (lp_theta_l - lp_ref_l)) - margin;
    -log_sigmoid(z)
}

/// Everything one preference-loss evaluation needs besides the policy.
#[derive(Clone, Copy)]
pub struct PreferenceContext<'a> {
    pub cfg: &'a DenoiserConfig,
    pub cond: &'a Conditioning,
    pub sched: &'a NoiseSchedule,
    pub params_ref: &'a ParamStore,
    pub beta: f64,
}

/// Records the preference loss at step `t`. Winner and loser are noised
/// with identical random draws (one stream, replayed), and the reference
/// log-probabilities enter as constants.
pub fn preference_loss_node(
    g: &mut Graph,
    ctx: &PreferenceContext,
    record: &PreferenceRecord,
    t: usize,
    noise_seed: u64,
    margin: f64,
) -> Result<NodeId> {
    let frame = &ctx.cond.frame;
    let (wp, wc) = noise_pair(frame, &record.y_w.cdr, t, ctx.sched, &mut rng::from_seed(noise_seed));
    let (lp, lc) = noise_pair(frame, &record.y_l.cdr, t, ctx.sched, &mut rng::from_seed(noise_seed));
    let ref_w = step_log_prob(ctx.params_ref, ctx.cfg, ctx.cond, &wp, &wc, ctx.sched)?;
    let ref_l = step_log_prob(ctx.params_ref, ctx.cfg, ctx.cond, &lp, &lc, ctx.sched)?;
    let th_w = step_log_prob_node(g, ctx.cfg, ctx.cond, &wp, &wc, ctx.sched);
    let th_l = step_log_prob_node(g, ctx.cfg, ctx.cond, &lp, &lc, ctx.sched);
    let d = g.sub(th_w, th_l);
    let d = g.add_scalar(d, ref_l - ref_w);
    let z = g.scale(d, ctx.beta * ctx.sched.steps() as f64);
    let z = g.add_scalar(z, -margin);
    let ls = g.log_sigmoid(z);
    Ok(g.scale(ls, -1.0))
}

fn loss_value(params: &ParamStore, ctx: &PreferenceContext, record: &PreferenceRecord, t: usize, seed: u64, margin: f64) -> Result<f64> {
    let mut g = Graph::new(params);
    let n = preference_loss_node(&mut g, ctx, record, t, seed, margin)?;
    let v = g.scalar_value(n);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(non_finite("preference loss", params))
    }
}

/// Reward-margin DPO loss for one record at step `t`.
pub fn poea_loss(params: &ParamStore, ctx: &PreferenceContext, record: &PreferenceRecord, t: usize, noise_seed: u64) -> Result<f64> {
    loss_value(params, ctx, record, t, noise_seed, record.margin)
}

/// Margin-free DPO loss for one record at step `t`.
pub fn dpo_loss(params: &ParamStore, ctx: &PreferenceContext, record: &PreferenceRecord, t: usize, noise_seed: u64) -> Result<f64> {
    loss_value(params, ctx, record, t, noise_seed, 0.0)
}

/// `beta (log p_theta - log p_ref)` of one reverse step on a noised copy of `design`.
pub fn implicit_reward(params: &ParamStore, ctx: &PreferenceContext, design: &Design, t: usize, noise_seed: u64) -> Result<f64> {
    let (p, c) = noise_pair(&ctx.cond.frame, &design.cdr, t, ctx.sched, &mut rng::from_seed(noise_seed));
    let a = step_log_prob(params, ctx.cfg, ctx.cond, &p, &c, ctx.sched)?;
    let b = step_log_prob(ctx.params_ref, ctx.cfg, ctx.cond, &p, &c, ctx.sched)?;
    Ok(ctx.beta * (a - b))
}

/// Per-iteration alignment diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iter: usize,
    pub temperature: f64,
    pub n_prefs: usize,
    pub n_prefs_total: usize,
    pub mean_rhat_train: f64,
    pub mean_rhat_val: f64,
    pub mean_implicit_reward: f64,
    pub mean_implicit_reward_w: f64,
    pub mean_implicit_reward_l: f64,
    pub loss_curve_path: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignReport {
    /// Validation mean collective reward of the starting policy.
    pub initial_val_rhat: f64,
    pub iterations: Vec<IterationReport>,
    /// Index into `{pi_0, ..., pi_T}` of the selected policy.
    pub best_iter: usize,
    pub best_val_rhat: f64,
}

pub struct AlignOutcome {
    /// `pi_0` (the reference) followed by each iteration's policy.
    pub policies: Vec<ParamStore>,
    pub best: ParamStore,
    pub report: AlignReport,
    pub loss_curves: Vec<Vec<f64>>,
}

/// Shared inputs of an alignment run.
pub struct AlignProblem<'a> {
    pub cfg: &'a DenoiserConfig,
    pub sched: &'a NoiseSchedule,
    pub prompts: &'a [ComplexInstance],
    pub validation: &'a [ComplexInstance],
}

/// Samples `n` designs per complex at `temperature` with seeds drawn from
/// `(root, tag, complex index, sample index)`.
pub fn sample_scored(
    params: &ParamStore,
    cfg: &DenoiserConfig,
    sched: &NoiseSchedule,
    complexes: &[(ComplexInstance, Conditioning)],
    n: usize,
    temperature: f64,
    w: &Weights,
    seed_root: u64,
    tag: &str,
) -> Result<Vec<Vec<ScoredDesign>>> {
    complexes
        .iter()
        .enumerate()
        .map(|(ci, (complex, cond))| {
            (0..n)
                .map(|k| {
                    let seed = rng::derive_seed(seed_root, tag, &[ci as u64, k as u64]);
                    let d = sample_cdr(params, cfg, cond, complex, sched, temperature, seed)?;
                    ScoredDesign::new(d, complex, w)
                })
                .collect()
        })
        .collect()
}

fn mean(v: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = v.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Mean collective reward of fresh temperature-1 samples on the
/// validation complexes. Seeds do not depend on the policy, so policies
/// are compared on common random numbers.
pub fn validation_score(
    params: &ParamStore,
    cfg: &DenoiserConfig,
    sched: &NoiseSchedule,
    val: &[(ComplexInstance, Conditioning)],
    n: usize,
    w: &Weights,
    seed: u64,
) -> Result<f64> {
    let scored = sample_scored(params, cfg, sched, val, n, 1.0, w, seed, "validation")?;
    Ok(mean(scored.iter().flatten().map(|s| s.rhat)))
}

/// Online iterative alignment against a fixed reference policy.
///
/// Each iteration samples designs at a decaying temperature, labels random
/// pairs by collective reward, appends them to the running preference set
/// and optimises the policy on the whole set; the policy with the best
/// validation reward (including the reference itself) is returned.
pub fn iterate_align(
    params_ref: &ParamStore,
    problem: &AlignProblem,
    acfg: &AlignConfig,
    seed: u64,
) -> Result<AlignOutcome> {
    acfg.validate()?;
    let w = acfg.weight_vector()?;
    let cfg = problem.cfg;
    let sched = problem.sched;
    let with_cond = |cs: &[ComplexInstance]| -> Result<Vec<(ComplexInstance, Conditioning)>> {
        cs.iter()
            .map(|c| Ok((c.clone(), Conditioning::new(params_ref, cfg, c)?)))
            .collect()
    };
    let prompts = with_cond(problem.prompts)?;
    let val = with_cond(problem.validation)?;
    if prompts.is_empty() {
        return Err(Error::Config("alignment needs at least one prompt complex".into()));
    }
    if val.is_empty() {
        return Err(Error::Config("alignment needs at least one validation complex".into()));
    }
    let val_seed = rng::derive_seed(seed, "align-val", &[]);
    let initial_val = validation_score(params_ref, cfg, sched, &val, acfg.val_samples, &w, val_seed)?;
    let mut policies = vec![params_ref.clone()];
    let mut val_scores = vec![initial_val];
    let mut reports = Vec::with_capacity(acfg.iterations);
    let mut curves = Vec::with_capacity(acfg.iterations);
    let mut dataset: Vec<(usize, PreferenceRecord)> = Vec::new();
    let mut theta = params_ref.clone();

    for it in 0..acfg.iterations {
        let temp = temperature_at(it, acfg);
        let mut pick_rng = rng::stream(seed, "align-prompts", &[it as u64]);
        let chosen: Vec<usize> = if acfg.prompts_per_iter == 0 || acfg.prompts_per_iter >= prompts.len() {
            (0..prompts.len()).collect()
        } else {
            let mut idx: Vec<usize> = (0..prompts.len()).collect();
            idx.shuffle(&mut pick_rng);
            idx.truncate(acfg.prompts_per_iter);
            idx.sort_unstable();
            idx
        };
        let subset: Vec<(ComplexInstance, Conditioning)> = chosen.iter().map(|&i| prompts[i].clone()).collect();
        let scored = sample_scored(&theta, cfg, sched, &subset, acfg.samples_per_prompt, temp, &w, rng::derive_seed(seed, "align-sample", &[it as u64]), "prompt")?;
        let mean_train = mean(scored.iter().flatten().map(|s| s.rhat));
        let mut pair_rng = rng::stream(seed, "align-pairs", &[it as u64]);
        let mut new_records = Vec::new();
        for (k, group) in scored.iter().enumerate() {
            for r in build_preferences(group, &mut pair_rng)? {
                new_records.push((chosen[k], r));
            }
        }
        let n_new = new_records.len();
        dataset.extend(new_records.iter().cloned());

        let mut curve = Vec::with_capacity(acfg.steps_per_iter);
        if dataset.is_empty() {
            log::warn!("iteration {it}: empty preference set, skipping optimisation");
        } else {
            let mut opt = Adam::new(&theta, acfg.lr, |n| !is_encoder_param(n));
            opt.clip_norm = acfg.clip_norm;
            let mut step_rng = rng::stream(seed, "align-steps", &[it as u64]);
            for _ in 0..acfg.steps_per_iter {
                let batch: Vec<(usize, usize, u64)> = (0..acfg.batch)
                    .map(|_| {
                        (
                            step_rng.random_range(0..dataset.len()),
                            step_rng.random_range(1..=sched.steps()),
                            step_rng.random::<u64>(),
                        )
                    })
                    .collect();
                let (loss, grads) = loss_and_grad(&theta, |g| {
                    let mut parts = Vec::with_capacity(batch.len());
                    for &(ri, t, s) in &batch {
                        let (ci, rec) = &dataset[ri];
                        let ctx = PreferenceContext {
                            cfg,
                            cond: &prompts[*ci].1,
                            sched,
                            params_ref,
                            beta: acfg.beta,
                        };
                        let margin = if acfg.use_margin { rec.margin } else { 0.0 };
                        parts.push(preference_loss_node(g, &ctx, rec, t, s, margin)?);
                    }
                    let all = g.concat_cols(&parts);
                    let s = g.sum(all);
                    Ok(g.scale(s, 1.0 / batch.len() as f64))
                })?;
                opt.step(&mut theta, &grads);
                curve.push(loss);
            }
        }

        let mut ir_rng = rng::stream(seed, "align-implicit", &[it as u64]);
        let (mut ir_w, mut ir_l) = (Vec::new(), Vec::new());
        for (ci, rec) in &new_records {
            let ctx = PreferenceContext {
                cfg,
                cond: &prompts[*ci].1,
                sched,
                params_ref,
                beta: acfg.beta,
            };
            let t = ir_rng.random_range(1..=sched.steps());
            let s: u64 = ir_rng.random();
            ir_w.push(implicit_reward(&theta, &ctx, &rec.y_w, t, s)?);
            ir_l.push(implicit_reward(&theta, &ctx, &rec.y_l, t, s)?);
        }
        let val_score = validation_score(&theta, cfg, sched, &val, acfg.val_samples, &w, val_seed)?;
        log::info!(
            "align iter {it}: temp {temp:.3}, {n_new} new pairs, train rhat {mean_train:.4}, val rhat {val_score:.4}"
        );
        reports.push(IterationReport {
            iter: it,
            temperature: temp,
            n_prefs: n_new,
            n_prefs_total: dataset.len(),
            mean_rhat_train: mean_train,
            mean_rhat_val: val_score,
            mean_implicit_reward: mean(ir_w.iter().chain(&ir_l).copied()),
            mean_implicit_reward_w: mean(ir_w.iter().copied()),
            mean_implicit_reward_l: mean(ir_l.iter().copied()),
            loss_curve_path: None,
        });
        curves.push(curve);
        val_scores.push(val_score);
        policies.push(theta.clone());
    }

    let best_iter = (0..val_scores.len()).fold(0, |b, k| if val_scores[k] > val_scores[b] { k } else { b });
    Ok(AlignOutcome {
        best: policies[best_iter].clone(),
        report: AlignReport {
            initial_val_rhat: initial_val,
            iterations: reports,
            best_iter,
            best_val_rhat: val_scores[best_iter],
        },
        policies,
        loss_curves: curves,
    })
}
