//! The parametric denoiser: invariant featurisation, a small residual MLP
//! trunk with neighbour messages, and frame-local decoding heads.

mod encoder;
mod features;

pub use encoder::{encode_sequence, masked_recovery_accuracy, masked_recovery_loss, pretrain_encoder, EncoderExample, MASK_TOKEN};
pub use features::{featurize, time_embedding, FeatureSet, PAIR_GEO_DIM, RBF_CENTERS};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{exp_map, frame_from_two_vectors, AxisAngle, Rotation};
use crate::model::{CdrState, ComplexInstance, ContextResidue, NUM_TYPES};
use crate::params::ParamStore;
use crate::scalar::{add3, scale3, sub3, Vec3};
use crate::tape::{Gradients, Graph, NodeId, Tensor};

/// Length unit of the canonical complex frame, in angstrom.
pub const POS_SCALE: f64 = 10.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiserConfig {
    pub hidden: usize,
    pub depth: usize,
    pub k_neighbors: usize,
    pub enc_dim: usize,
    pub enc_hidden: usize,
    pub time_dim: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig {
            hidden: 64,
            depth: 3,
            k_neighbors: 16,
            enc_dim: 16,
            enc_hidden: 32,
            time_dim: 16,
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("hidden", self.hidden),
            ("k_neighbors", self.k_neighbors),
            ("enc_dim", self.enc_dim),
            ("enc_hidden", self.enc_hidden),
            ("time_dim", self.time_dim),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("model.{name} must be positive")));
            }
        }
        if self.time_dim % 2 != 0 || self.enc_dim % 2 != 0 {
            return Err(Error::Config("model.time_dim and model.enc_dim must be even".into()));
        }
        Ok(())
    }

    /// Width of the per-residue input row, excluding the time embedding.
    pub fn single_dim(&self) -> usize {
        NUM_TYPES + 2 + self.enc_dim + 3 + 9
    }

    /// Neighbour identity rows for context residues: role one-hot + encoder embedding.
    pub fn ctx_identity_dim(&self) -> usize {
        3 + self.enc_dim
    }

    /// Neighbour identity rows for CDR residues: role one-hot + type one-hot.
    pub fn cdr_identity_dim(&self) -> usize {
        3 + NUM_TYPES
    }
}

/// Fresh parameters: Glorot-normal weights, zero biases, zero output heads.
pub fn init_params(cfg: &DenoiserConfig, rng: &mut crate::rng::Rng) -> Result<ParamStore> {
    cfg.validate()?;
    let (h, e) = (cfg.hidden, cfg.enc_dim);
    let mut p = ParamStore::default();
    p.insert_normal("enc.tok", MASK_TOKEN + 1, e, rng);
    p.insert_normal("enc.w1", 2 * e, cfg.enc_hidden, rng);
    p.insert_zeros("enc.b1", 1, cfg.enc_hidden);
    p.insert_normal("enc.w2", cfg.enc_hidden, e, rng);
    p.insert_zeros("enc.b2", 1, e);
    p.insert_zeros("enc.head_w", e, NUM_TYPES);
    p.insert_zeros("enc.head_b", 1, NUM_TYPES);

    p.insert_normal("den.single_w", cfg.single_dim() + cfg.time_dim, h, rng);
    p.insert_zeros("den.single_b", 1, h);
    p.insert_normal("den.pair_w", PAIR_GEO_DIM, h, rng);
    p.insert_normal("den.ctx_w", cfg.ctx_identity_dim(), h, rng);
    p.insert_normal("den.cdr_w", cfg.cdr_identity_dim(), h, rng);
    p.insert_zeros("den.pair_b", 1, h);
    p.insert_normal("den.in_w", 2 * h, h, rng);
    p.insert_zeros("den.in_b", 1, h);
    for l in 0..cfg.depth {
        p.insert_normal(&format!("den.trunk{l}_w"), h, h, rng);
        p.insert_zeros(&format!("den.trunk{l}_b"), 1, h);
    }
    for (name, width) in [("type", NUM_TYPES), ("off", 3), ("shift", 3), ("rot", 3)] {
        p.insert_zeros(&format!("den.{name}_w"), h, width);
        p.insert_zeros(&format!("den.{name}_b"), 1, width);
    }
    Ok(p)
}

pub fn is_encoder_param(name: &str) -> bool {
    name.starts_with("enc.")
}

/// Complex-attached reference frame: origin at the anchor midpoint, first
/// axis along the anchor pair, second towards the antigen centroid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Frame {
    pub rot: Rotation,
    pub center: Vec3,
}

impl Frame {
    pub fn of(complex: &ComplexInstance) -> Self {
        let (a, b) = complex.anchors();
        let center = complex.anchor_midpoint();
        let rot = frame_from_two_vectors(sub3(b.x, a.x), sub3(complex.antigen_centroid(), center));
        Frame { rot, center }
    }

    /// Global coordinate to scaled frame coordinate.
    pub fn to_local(&self, x: Vec3) -> Vec3 {
        scale3(self.rot.apply_inverse(sub3(x, self.center)), 1.0 / POS_SCALE)
    }

    pub fn to_global(&self, z: Vec3) -> Vec3 {
        add3(self.center, self.rot.apply(scale3(z, POS_SCALE)))
    }

    pub fn orient_to_local(&self, o: &Rotation) -> Rotation {
        self.rot.transpose().compose(o)
    }

    pub fn orient_to_global(&self, o: &Rotation) -> Rotation {
        self.rot.compose(o)
    }
}

/// Per-complex quantities shared by every denoiser call: the frame, the
/// context residues and the frozen encoder embeddings.
#[derive(Clone, Debug)]
pub struct Conditioning {
    pub frame: Frame,
    pub context: Vec<ContextResidue>,
    /// Antibody chain position of each context residue; `None` for antigen.
    pub chain_pos: Vec<Option<usize>>,
    pub cdr_start: usize,
    pub cdr_len: usize,
    pub ctx_emb: Tensor,
    pub cdr_emb: Tensor,
}

impl Conditioning {
    pub fn new(params: &ParamStore, cfg: &DenoiserConfig, complex: &ComplexInstance) -> Result<Self> {
        let (l, m) = complex.cdr_span();
        let ab = complex.antibody_sequence();
        let ab_tokens: Vec<usize> = ab.iter().map(|a| a.map_or(MASK_TOKEN, |a| a.index())).collect();
        let ab_emb = encode_sequence(params, cfg, &ab_tokens);
        let ag_tokens: Vec<usize> = complex.antigen_sequence().iter().map(|a| a.index()).collect();
        let ag_emb = encode_sequence(params, cfg, &ag_tokens);
        let e = cfg.enc_dim;
        let n_fw = complex.framework_len();
        let mut ctx = Vec::with_capacity(complex.context().len() * e);
        let mut chain_pos = Vec::with_capacity(complex.context().len());
        for k in 0..n_fw {
            let pos = if k < l { k } else { k + m };
            ctx.extend_from_slice(ab_emb.row(pos));
            chain_pos.push(Some(pos));
        }
        for k in 0..ag_tokens.len() {
            ctx.extend_from_slice(ag_emb.row(k));
            chain_pos.push(None);
        }
        let mut cdr = Vec::with_capacity(m * e);
        for i in 0..m {
            cdr.extend_from_slice(ab_emb.row(l + i));
        }
        let n_ctx = complex.context().len();
        let out = Conditioning {
            frame: Frame::of(complex),
            context: complex.context().to_vec(),
            chain_pos,
            cdr_start: l,
            cdr_len: m,
            ctx_emb: Tensor::from_vec(n_ctx, e, ctx),
            cdr_emb: Tensor::from_vec(m, e, cdr),
        };
        if !out.ctx_emb.data.iter().chain(&out.cdr_emb.data).all(|v| v.is_finite()) {
            return Err(non_finite("encoder embedding", params));
        }
        Ok(out)
    }
}

pub(crate) fn non_finite(what: &str, params: &ParamStore) -> Error {
    let norms: Vec<String> = params.norms().iter().map(|(n, v)| format!("{n}={v:.3e}")).collect();
    Error::Numeric(format!("non-finite {what}; parameter norms: {}", norms.join(", ")))
}

/// Output nodes of one denoiser evaluation.
#[derive(Clone, Copy, Debug)]
pub struct Heads {
    /// `m x 20` type logits.
    pub logits: NodeId,
    /// `m x 3` predicted clean positions in scaled frame coordinates.
    pub z_pred: NodeId,
    /// `m x 9` row-major `exp` of the body-frame rotation correction.
    pub rot_corr: NodeId,
}

/// Records the denoiser forward pass on `g`.
pub fn forward(g: &mut Graph, cfg: &DenoiserConfig, feats: &FeatureSet) -> Heads {
    let m = feats.single.rows;
    let time = Tensor::from_vec(
        m,
        cfg.time_dim,
        (0..m).flat_map(|_| feats.time_embedding.iter().copied()).collect(),
    );
    let single = g.constant(feats.single.clone());
    let time = g.constant(time);
    let single = g.concat_cols(&[single, time]);
    let (sw, sb) = (g.param_named("den.single_w"), g.param_named("den.single_b"));
    let s = g.linear(single, sw, sb);
    let s = g.silu(s);

    // neighbour identities are projected once per residue, then gathered per pair
    let ctx_id = g.constant(feats.ctx_identity.clone());
    let cdr_id = g.constant(feats.cdr_identity.clone());
    let (cw, dw) = (g.param_named("den.ctx_w"), g.param_named("den.cdr_w"));
    let ctx_p = g.matmul(ctx_id, cw);
    let cdr_p = g.matmul(cdr_id, dw);
    let table = g.concat_rows(&[ctx_p, cdr_p]);
    let ident = g.gather_rows(table, &feats.pair_src);
    let geo = g.constant(feats.pair_geo.clone());
    let (pw, pb) = (g.param_named("den.pair_w"), g.param_named("den.pair_b"));
    let pg = g.matmul(geo, pw);
    let pair = g.add(pg, ident);
    let pair = g.add_bias(pair, pb);
    let pair = g.silu(pair);
    let agg = g.constant(feats.aggregation());
    let msg = g.matmul(agg, pair);

    let cat = g.concat_cols(&[s, msg]);
    let (iw, ib) = (g.param_named("den.in_w"), g.param_named("den.in_b"));
    let h = g.linear(cat, iw, ib);
    let mut h = g.silu(h);
    for l in 0..cfg.depth {
        let w = g.param_named(&format!("den.trunk{l}_w"));
        let b = g.param_named(&format!("den.trunk{l}_b"));
        let u = g.linear(h, w, b);
        let u = g.silu(u);
        h = g.add(h, u);
    }

    let head = |g: &mut Graph, name: &str| {
        let w = g.param_named(&format!("den.{name}_w"));
        let b = g.param_named(&format!("den.{name}_b"));
        g.linear(h, w, b)
    };
    let logits = head(g, "type");
    let off = head(g, "off");
    let shift = head(g, "shift");
    let rot = head(g, "rot");

    // local offset is expressed in the residue frame, the shift in the complex frame
    let off = g.mat3_vec_rows(off, feats.local_to_frame.clone());
    let z = g.constant(feats.z.clone());
    let z_pred = g.add(z, off);
    let z_pred = g.add(z_pred, shift);
    let rot_corr = g.exp_map_rows(rot);
    Heads { logits, z_pred, rot_corr }
}

/// Denoiser outputs in global coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub logits: Vec<[f64; NUM_TYPES]>,
    pub x_pred: Vec<Vec3>,
    pub rot_pred: Vec<Rotation>,
}

/// Plain forward evaluation.
pub fn denoise(
    params: &ParamStore,
    cfg: &DenoiserConfig,
    cond: &Conditioning,
    noisy: &CdrState,
    t: usize,
) -> Result<Prediction> {
    let feats = featurize(cfg, cond, noisy, t);
    let mut g = Graph::new(params);
    let heads = forward(&mut g, cfg, &feats);
    let (lv, zv, rv) = (g.value(heads.logits), g.value(heads.z_pred), g.value(heads.rot_corr));
    if !lv.data.iter().chain(&zv.data).chain(&rv.data).all(|v| v.is_finite()) {
        return Err(non_finite("denoiser activation", params));
    }
    let m = noisy.len();
    let mut out = Prediction {
        logits: Vec::with_capacity(m),
        x_pred: Vec::with_capacity(m),
        rot_pred: Vec::with_capacity(m),
    };
    for i in 0..m {
        let mut l = [0.0; NUM_TYPES];
        l.copy_from_slice(lv.row(i));
        out.logits.push(l);
        let z = zv.row(i);
        out.x_pred.push(cond.frame.to_global([z[0], z[1], z[2]]));
        let mut e = [0.0; 9];
        e.copy_from_slice(rv.row(i));
        out.rot_pred.push(noisy.residues[i].orient.compose(&Rotation::from_row_major(e)));
    }
    Ok(out)
}

/// Evaluates `build` on a fresh graph and returns the loss with exact
/// parameter gradients.
pub fn loss_and_grad<F>(params: &ParamStore, build: F) -> Result<(f64, Gradients)>
where
    F: FnOnce(&mut Graph) -> Result<NodeId>,
{
    let mut g = Graph::new(params);
    let loss = build(&mut g)?;
    let v = g.scalar_value(loss);
    if !v.is_finite() {
        return Err(non_finite("loss", params));
    }
    Ok((v, g.backward(loss)))
}

/// Adam with global gradient-norm clipping, restricted to a trainable subset.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: f64,
    trainable: Vec<bool>,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    steps: i32,
}

impl Adam {
    pub fn new(params: &ParamStore, lr: f64, trainable: impl Fn(&str) -> bool) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 100.0,
            trainable: params.iter().map(|(n, _)| trainable(n)).collect(),
            m: params.iter().map(|(_, t)| vec![0.0; t.len()]).collect(),
            v: params.iter().map(|(_, t)| vec![0.0; t.len()]).collect(),
            steps: 0,
        }
    }

    /// Applies one update; returns the pre-clipping gradient norm.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients) -> f64 {
        let norm = grads
            .tensors
            .iter()
            .zip(&self.trainable)
            .filter(|(_, &tr)| tr)
            .flat_map(|(t, _)| t.data.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt();
        let scale = if norm > self.clip_norm { self.clip_norm / norm } else { 1.0 };
        self.steps += 1;
        let bc1 = 1.0 - self.beta1.powi(self.steps);
        let bc2 = 1.0 - self.beta2.powi(self.steps);
        for (pi, g) in grads.tensors.iter().enumerate() {
            if !self.trainable[pi] {
                continue;
            }
            let p = params.tensor_mut(pi);
            for (k, &gk) in g.data.iter().enumerate() {
                let gk = gk * scale;
                let m = &mut self.m[pi][k];
                let v = &mut self.v[pi][k];
                *m = self.beta1 * *m + (1.0 - self.beta1) * gk;
                *v = self.beta2 * *v + (1.0 - self.beta2) * gk * gk;
                p.data[k] -= self.lr * (*m / bc1) / ((*v / bc2).sqrt() + self.eps);
            }
        }
        norm
    }
}

/// Small random perturbation of every parameter, used to move tests away
/// from the zero-initialised heads.
pub fn jitter_params(params: &mut ParamStore, scale: f64, rng: &mut crate::rng::Rng) {
    for i in 0..params.len() {
        for v in &mut params.tensor_mut(i).data {
            *v += scale * (rng.random::<f64>() * 2.0 - 1.0);
        }
    }
}

/// `orient * exp(v)` for a body-frame correction.
pub fn apply_correction(orient: &Rotation, v: Vec3) -> Rotation {
    orient.compose(&exp_map(AxisAngle(v)))
}

#[cfg(test)]
mod tests;
