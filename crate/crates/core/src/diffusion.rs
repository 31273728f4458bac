//! Forward noising kernels, training losses, reverse-step densities and
//! the temperature-scaled sampler.
//!
//! Positions are diffused in the complex frame of [`Frame`], scaled by
//! [`POS_SCALE`]; orientations are diffused relative to that frame. Both
//! choices make every kernel commute with global rigid motion.

use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::denoiser::{
    featurize, forward, non_finite, Adam, Conditioning, DenoiserConfig, Frame, Heads,
};
use crate::error::Result;
use crate::geom::{sample_igso3_approx, scale_rot, uniform_rotation, Rotation};
use crate::model::{AminoAcid, CdrState, ComplexInstance, Design, ResidueState, NUM_TYPES};
use crate::params::ParamStore;
use crate::rng::Rng;
use crate::scalar::Vec3;
use crate::schedule::NoiseSchedule;
use crate::tape::{Graph, NodeId, Tensor};

/// Probability floor inside categorical log-masses.
pub const PROB_FLOOR: f64 = 1e-12;

const UNIFORM: f64 = 1.0 / NUM_TYPES as f64;

#[derive(Clone, Debug, PartialEq)]
pub struct NoisyCdr {
    pub cdr: CdrState,
    pub t: usize,
}

/// `q(s^t | s^0) = abar_t onehot(s0) + (1 - abar_t) / 20`.
pub fn forward_type_dist(s0: usize, t: usize, sched: &NoiseSchedule) -> [f64; NUM_TYPES] {
    mix(s0, sched.alpha_bar(t))
}

/// One-step kernel `q(s^t | s^{t-1}) = (1 - beta_t) onehot + beta_t / 20`.
pub fn step_type_dist(s_prev: usize, t: usize, sched: &NoiseSchedule) -> [f64; NUM_TYPES] {
    mix(s_prev, sched.alpha(t))
}

fn mix(s: usize, keep: f64) -> [f64; NUM_TYPES] {
    let mut p = [(1.0 - keep) * UNIFORM; NUM_TYPES];
    p[s] += keep;
    p
}

/// `q(s^{t-1} | s^t, s^0)`.
pub fn type_posterior(s_t: usize, s0: usize, t: usize, sched: &NoiseSchedule) -> [f64; NUM_TYPES] {
    let a = mix(s_t, sched.alpha(t));
    let b = mix(s0, sched.alpha_bar(t - 1));
    let mut p = [0.0; NUM_TYPES];
    let mut z = 0.0;
    for k in 0..NUM_TYPES {
        p[k] = a[k] * b[k];
        z += p[k];
    }
    for v in &mut p {
        *v /= z;
    }
    p
}

/// Stable `softmax(logits / temp)`.
pub fn softmax_temp(logits: &[f64], temp: f64) -> [f64; NUM_TYPES] {
    let mx = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p = [0.0; NUM_TYPES];
    let mut z = 0.0;
    for (k, &l) in logits.iter().enumerate() {
        p[k] = ((l - mx) / temp).exp();
        z += p[k];
    }
    for v in &mut p {
        *v /= z;
    }
    p
}

pub fn sample_categorical(p: &[f64], rng: &mut Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, &pk) in p.iter().enumerate() {
        acc += pk;
        if u < acc {
            return k;
        }
    }
    // rounding left u above the running sum; take the last supported type
    p.iter().rposition(|&pk| pk > 0.0).unwrap_or(0)
}

fn argmax(v: &[f64]) -> usize {
    (0..v.len()).fold(0, |b, k| if v[k] > v[b] { k } else { b })
}

fn normal3(rng: &mut Rng) -> Vec3 {
    [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)]
}

/// Draw from `N(sqrt(abar_t) x0, (1 - abar_t) I)`.
pub fn forward_pos(x0: Vec3, t: usize, sched: &NoiseSchedule, rng: &mut Rng) -> Vec3 {
    let ab = sched.alpha_bar(t);
    let (a, s) = (ab.sqrt(), (1.0 - ab).sqrt());
    let e = normal3(rng);
    [a * x0[0] + s * e[0], a * x0[1] + s * e[1], a * x0[2] + s * e[2]]
}

/// Draw from `IG(ScaleRot(sqrt(abar_t), O0), 1 - abar_t)`.
pub fn forward_rot(o0: &Rotation, t: usize, sched: &NoiseSchedule, rng: &mut Rng) -> Rotation {
    let ab = sched.alpha_bar(t);
    sample_igso3_approx(&scale_rot(ab.sqrt(), o0), 1.0 - ab, rng)
}

fn step_pos(x: Vec3, t: usize, sched: &NoiseSchedule, rng: &mut Rng) -> Vec3 {
    let b = sched.beta(t);
    let (a, s) = ((1.0 - b).sqrt(), b.sqrt());
    let e = normal3(rng);
    [a * x[0] + s * e[0], a * x[1] + s * e[1], a * x[2] + s * e[2]]
}

fn step_rot(o: &Rotation, t: usize, sched: &NoiseSchedule, rng: &mut Rng) -> Rotation {
    let b = sched.beta(t);
    sample_igso3_approx(&scale_rot((1.0 - b).sqrt(), o), b, rng)
}

fn map_residues(
    frame: &Frame,
    cdr: &CdrState,
    mut f: impl FnMut(usize, Vec3, &Rotation) -> (usize, Vec3, Rotation),
) -> CdrState {
    CdrState::new(
        cdr.residues
            .iter()
            .map(|r| {
                let (aa, z, o) = f(r.aa.index(), frame.to_local(r.x), &frame.orient_to_local(&r.orient));
                ResidueState::new(
                    AminoAcid::new(aa).expect("type index in range"),
                    frame.to_global(z),
                    frame.orient_to_global(&o),
                )
            })
            .collect(),
    )
}

/// Noises a clean CDR straight to step `t` (`t = 0` returns it unchanged).
pub fn noise_to(frame: &Frame, cdr0: &CdrState, t: usize, sched: &NoiseSchedule, rng: &mut Rng) -> NoisyCdr {
    if t == 0 {
        return NoisyCdr { cdr: cdr0.clone(), t };
    }
    let cdr = map_residues(frame, cdr0, |s, z, o| {
        let s = sample_categorical(&forward_type_dist(s, t, sched), rng);
        (s, forward_pos(z, t, sched, rng), forward_rot(o, t, sched, rng))
    });
    NoisyCdr { cdr, t }
}

/// One forward step from `prev.t` to `prev.t + 1`.
pub fn noise_step(frame: &Frame, prev: &NoisyCdr, sched: &NoiseSchedule, rng: &mut Rng) -> NoisyCdr {
    let t = prev.t + 1;
    let cdr = map_residues(frame, &prev.cdr, |s, z, o| {
        let s = sample_categorical(&step_type_dist(s, t, sched), rng);
        (s, step_pos(z, t, sched, rng), step_rot(o, t, sched, rng))
    });
    NoisyCdr { cdr, t }
}

/// States at `t - 1` and `t` on one forward path from `cdr0`.
pub fn noise_pair(
    frame: &Frame,
    cdr0: &CdrState,
    t: usize,
    sched: &NoiseSchedule,
    rng: &mut Rng,
) -> (NoisyCdr, NoisyCdr) {
    let prev = noise_to(frame, cdr0, t - 1, sched, rng);
    let cur = noise_step(frame, &prev, sched, rng);
    (prev, cur)
}

/// Regression targets of the three training losses.
#[derive(Clone, Debug)]
pub struct LossTargets {
    pub posterior: Vec<[f64; NUM_TYPES]>,
    pub z0: Tensor,
    /// `O0^T O_t` per residue, row-major.
    pub rel_orient: Vec<[f64; 9]>,
}

impl LossTargets {
    pub fn new(frame: &Frame, cdr0: &CdrState, noisy: &NoisyCdr, sched: &NoiseSchedule) -> Self {
        let m = cdr0.len();
        let mut z0 = Vec::with_capacity(3 * m);
        let mut posterior = Vec::with_capacity(m);
        let mut rel_orient = Vec::with_capacity(m);
        for (r0, rt) in cdr0.residues.iter().zip(&noisy.cdr.residues) {
            posterior.push(type_posterior(rt.aa.index(), r0.aa.index(), noisy.t, sched));
            z0.extend_from_slice(&frame.to_local(r0.x));
            rel_orient.push(r0.orient.transpose().compose(&rt.orient).row_major());
        }
        LossTargets {
            posterior,
            z0: Tensor::from_vec(m, 3, z0),
            rel_orient,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LossNodes {
    pub l_s: NodeId,
    pub l_x: NodeId,
    pub l_o: NodeId,
    pub total: NodeId,
}

const IDENTITY9: [f64; 9] = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];

/// Per-residue means of the type KL, the squared position error and the
/// squared Frobenius orientation error.
pub fn loss_terms(g: &mut Graph, heads: &Heads, targets: &LossTargets) -> LossNodes {
    let m = targets.posterior.len();
    let inv_m = 1.0 / m as f64;
    let lp = g.log_softmax(heads.logits);
    let neg_q: Vec<f64> = targets.posterior.iter().flatten().map(|q| -q * inv_m).collect();
    let cross = g.dot_const(lp, neg_q);
    let neg_entropy: f64 = targets
        .posterior
        .iter()
        .flatten()
        .filter(|&&q| q > 0.0)
        .map(|q| q * q.ln())
        .sum::<f64>()
        * inv_m;
    let l_s = g.add_scalar(cross, neg_entropy);

    let z0 = g.constant(targets.z0.clone());
    let d = g.sub(heads.z_pred, z0);
    let d = g.square(d);
    let d = g.sum(d);
    let l_x = g.scale(d, inv_m);

    let rel = g.mat3_rows(heads.rot_corr, targets.rel_orient.clone());
    let eye = g.constant(Tensor::from_vec(m, 9, IDENTITY9.repeat(m)));
    let d = g.sub(rel, eye);
    let d = g.square(d);
    let d = g.sum(d);
    let l_o = g.scale(d, inv_m);

    let s = g.add(l_s, l_x);
    let total = g.add(s, l_o);
    LossNodes { l_s, l_x, l_o, total }
}

/// Records `L_s + L_x + L_O` for a given noisy state.
pub fn diffusion_loss_nodes(
    g: &mut Graph,
    cfg: &DenoiserConfig,
    cond: &Conditioning,
    cdr0: &CdrState,
    noisy: &NoisyCdr,
    sched: &NoiseSchedule,
) -> LossNodes {
    let feats = featurize(cfg, cond, &noisy.cdr, noisy.t);
    let heads = forward(g, cfg, &feats);
    loss_terms(g, &heads, &LossTargets::new(&cond.frame, cdr0, noisy, sched))
}

/// Noises `cdr0` to `t` and returns `(L_s, L_x, L_O)`.
pub fn diffusion_losses(
    params: &ParamStore,
    cfg: &DenoiserConfig,
    cond: &Conditioning,
    cdr0: &CdrState,
    t: usize,
    sched: &NoiseSchedule,
    rng: &mut Rng,
) -> Result<(f64, f64, f64)> {
    let noisy = noise_to(&cond.frame, cdr0, t, sched, rng);
    let mut g = Graph::new(params);
    let n = diffusion_loss_nodes(&mut g, cfg, cond, cdr0, &noisy, sched);
    let out = (g.scalar_value(n.l_s), g.scalar_value(n.l_x), g.scalar_value(n.l_o));
    if !(out.0.is_finite() && out.1.is_finite() && out.2.is_finite()) {
        return Err(non_finite("diffusion loss", params));
    }
    Ok(out)
}

/// Log-density of the reverse kernel `p(state_prev | state_t)`, summed over
/// residues: floored categorical mass, isotropic Gaussian on scaled frame
/// positions and the tangent Gaussian on orientations, all with variance
/// `beta_t`.
pub fn step_log_prob_node(
    g: &mut Graph,
    cfg: &DenoiserConfig,
    cond: &Conditioning,
    prev: &NoisyCdr,
    cur: &NoisyCdr,
    sched: &NoiseSchedule,
) -> NodeId {
    debug_assert_eq!(prev.t + 1, cur.t);
    let m = cur.cdr.len();
    let beta = sched.beta(cur.t);
    let norm = -1.5 * (2.0 * std::f64::consts::PI * beta).ln() * m as f64;
    let feats = featurize(cfg, cond, &cur.cdr, cur.t);
    let heads = forward(g, cfg, &feats);

    let lp = g.log_softmax(heads.logits);
    let lpv = g.value(lp).clone();
    let mut sel = vec![0.0; m * NUM_TYPES];
    let mut floored = 0.0;
    for (i, r) in prev.cdr.residues.iter().enumerate() {
        let k = i * NUM_TYPES + r.aa.index();
        if lpv.data[k] < PROB_FLOOR.ln() {
            floored += PROB_FLOOR.ln();
        } else {
            sel[k] = 1.0;
        }
    }
    let type_term = g.dot_const(lp, sel);
    let type_term = g.add_scalar(type_term, floored);

    let z_prev: Vec<f64> = prev.cdr.residues.iter().flat_map(|r| cond.frame.to_local(r.x)).collect();
    let z_prev = g.constant(Tensor::from_vec(m, 3, z_prev));
    let d = g.sub(heads.z_pred, z_prev);
    let d = g.square(d);
    let d = g.sum(d);
    let pos_term = g.scale(d, -0.5 / beta);
    let pos_term = g.add_scalar(pos_term, norm);

    // cos(theta) = (tr(E^T O_t^T O_prev) - 1) / 2 with rot_pred = O_t E
    let b: Vec<f64> = cur
        .cdr
        .residues
        .iter()
        .zip(&prev.cdr.residues)
        .flat_map(|(c, p)| c.orient.transpose().compose(&p.orient).row_major())
        .collect();
    let b = g.constant(Tensor::from_vec(m, 9, b));
    let prod = g.mul(heads.rot_corr, b);
    let ones = g.constant(Tensor::from_vec(9, 1, vec![0.5; 9]));
    let cos = g.matmul(prod, ones);
    let cos = g.add_scalar(cos, -0.5);
    let th2 = g.acos_sq(cos);
    let th2 = g.sum(th2);
    let rot_term = g.scale(th2, -0.5 / beta);
    let rot_term = g.add_scalar(rot_term, norm);

    let s = g.add(type_term, pos_term);
    g.add(s, rot_term)
}

pub fn step_log_prob(
    params: &ParamStore,
    cfg: &DenoiserConfig,
    cond: &Conditioning,
    prev: &NoisyCdr,
    cur: &NoisyCdr,
    sched: &NoiseSchedule,
) -> Result<f64> {
    let mut g = Graph::new(params);
    let n = step_log_prob_node(&mut g, cfg, cond, prev, cur, sched);
    let v = g.scalar_value(n);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(non_finite("step log-probability", params))
    }
}

/// Denoiser outputs in frame coordinates: logits, predicted scaled
/// positions, and predicted orientations (global).
struct LocalPrediction {
    logits: Vec<Vec<f64>>,
    z_pred: Vec<Vec3>,
    rot_pred: Vec<Rotation>,
}

fn predict(params: &ParamStore, cfg: &DenoiserConfig, cond: &Conditioning, noisy: &NoisyCdr) -> Result<LocalPrediction> {
    let feats = featurize(cfg, cond, &noisy.cdr, noisy.t);
    let mut g = Graph::new(params);
    let heads = forward(&mut g, cfg, &feats);
    let (lv, zv, rv) = (g.value(heads.logits), g.value(heads.z_pred), g.value(heads.rot_corr));
    if !lv.data.iter().chain(&zv.data).chain(&rv.data).all(|v| v.is_finite()) {
        return Err(non_finite("denoiser activation", params));
    }
    let m = noisy.cdr.len();
    Ok(LocalPrediction {
        logits: (0..m).map(|i| lv.row(i).to_vec()).collect(),
        z_pred: (0..m).map(|i| [zv.get(i, 0), zv.get(i, 1), zv.get(i, 2)]).collect(),
        rot_pred: (0..m)
            .map(|i| {
                let mut e = [0.0; 9];
                e.copy_from_slice(rv.row(i));
                noisy.cdr.residues[i].orient.compose(&Rotation::from_row_major(e))
            })
            .collect(),
    })
}

/// One ancestral step `t -> t - 1`. The last step returns the predicted
/// means and the most likely types.
pub fn reverse_step(
    params: &ParamStore,
    cfg: &DenoiserConfig,
    cond: &Conditioning,
    noisy: &NoisyCdr,
    temperature: f64,
    sched: &NoiseSchedule,
    rng: &mut Rng,
) -> Result<NoisyCdr> {
    assert!(noisy.t >= 1, "reverse step from t = 0");
    let pred = predict(params, cfg, cond, noisy)?;
    let beta = sched.beta(noisy.t);
    let last = noisy.t == 1;
    let mut residues = Vec::with_capacity(noisy.cdr.len());
    for i in 0..noisy.cdr.len() {
        let (aa, z, o) = if last {
            (argmax(&pred.logits[i]), pred.z_pred[i], pred.rot_pred[i])
        } else {
            let p = softmax_temp(&pred.logits[i], temperature);
            let aa = sample_categorical(&p, rng);
            let e = normal3(rng);
            let s = beta.sqrt();
            let zp = pred.z_pred[i];
            let z = [zp[0] + s * e[0], zp[1] + s * e[1], zp[2] + s * e[2]];
            (aa, z, sample_igso3_approx(&pred.rot_pred[i], beta, rng))
        };
        residues.push(ResidueState::new(
            AminoAcid::new(aa).expect("type index in range"),
            cond.frame.to_global(z),
            o,
        ));
    }
    Ok(NoisyCdr {
        cdr: CdrState::new(residues),
        t: noisy.t - 1,
    })
}

/// The `t = T` starting state: uniform types, standard normal scaled frame
/// positions (centred on the anchor midpoint) and uniform orientations.
pub fn initial_state(cond: &Conditioning, sched: &NoiseSchedule, rng: &mut Rng) -> NoisyCdr {
    let residues = (0..cond.cdr_len)
        .map(|_| {
            let aa = AminoAcid::new(rng.random_range(0..NUM_TYPES)).expect("type index in range");
            let z = normal3(rng);
            let o: Rotation = uniform_rotation(rng);
            ResidueState::new(aa, cond.frame.to_global(z), cond.frame.orient_to_global(&o))
        })
        .collect();
    NoisyCdr {
        cdr: CdrState::new(residues),
        t: sched.steps(),
    }
}

/// Full reverse chain at a fixed temperature; deterministic in `seed`.
pub fn sample_cdr(
    params: &ParamStore,
    cfg: &DenoiserConfig,
    cond: &Conditioning,
    complex: &ComplexInstance,
    sched: &NoiseSchedule,
    temperature: f64,
    seed: u64,
) -> Result<Design> {
    let mut rng = crate::rng::from_seed(seed);
    let mut state = initial_state(cond, sched, &mut rng);
    while state.t > 0 {
        state = reverse_step(params, cfg, cond, &state, temperature, sched, &mut rng)?;
    }
    Ok(Design::new(complex.id.clone(), state.cdr, seed).with_energies(complex))
}

/// Supervised denoising on `(complex, clean CDR)` pairs with the encoder
/// frozen; returns updated parameters and the per-step mean loss.
#[allow(clippy::too_many_arguments)]
pub fn train_diffusion(
    params: &ParamStore,
    cfg: &DenoiserConfig,
    sched: &NoiseSchedule,
    corpus: &[(ComplexInstance, CdrState)],
    steps: usize,
    lr: f64,
    batch: usize,
    rng: &mut Rng,
) -> Result<(ParamStore, Vec<f64>)> {
    if corpus.is_empty() {
        return Err(crate::Error::Config("diffusion training corpus is empty".into()));
    }
    let conds = corpus
        .iter()
        .map(|(c, _)| Conditioning::new(params, cfg, c))
        .collect::<Result<Vec<_>>>()?;
    let mut params = params.clone();
    let mut opt = Adam::new(&params, lr, |n| !crate::denoiser::is_encoder_param(n));
    let batch = batch.max(1);
    let mut curve = Vec::with_capacity(steps);
    for _ in 0..steps {
        let picks: Vec<(usize, NoisyCdr)> = (0..batch)
            .map(|_| {
                let i = rng.random_range(0..corpus.len());
                let t = rng.random_range(1..=sched.steps());
                (i, noise_to(&conds[i].frame, &corpus[i].1, t, sched, rng))
            })
            .collect();
        let (loss, grads) = crate::denoiser::loss_and_grad(&params, |g| {
            let parts: Vec<NodeId> = picks
                .iter()
                .map(|(i, noisy)| diffusion_loss_nodes(g, cfg, &conds[*i], &corpus[*i].1, noisy, sched).total)
                .collect();
            let all = g.concat_cols(&parts);
            let s = g.sum(all);
            Ok(g.scale(s, 1.0 / batch as f64))
        })?;
        opt.step(&mut params, &grads);
        curve.push(loss);
    }
    Ok((params, curve))
}
