use rand::Rng as _;

use crate::error::{Error, Result};
use crate::model::{AminoAcid, NUM_TYPES};
use crate::params::ParamStore;
use crate::tape::{Graph, NodeId, Tensor};

use super::{features::time_embedding, is_encoder_param, Adam, DenoiserConfig};

/// Token id of a masked position; real residue types use `0..20`.
pub const MASK_TOKEN: usize = NUM_TYPES;

/// One antibody chain for masked-CDR recovery.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderExample {
    pub sequence: Vec<AminoAcid>,
    /// `(start, length)` of the CDR within `sequence`.
    pub span: (usize, usize),
}

impl EncoderExample {
    fn masked_tokens(&self) -> Vec<usize> {
        let (l, m) = self.span;
        self.sequence
            .iter()
            .enumerate()
            .map(|(p, a)| if p >= l && p < l + m { MASK_TOKEN } else { a.index() })
            .collect()
    }
}

/// Returns `(embeddings, pretraining logits)`, both one row per position.
fn encoder_forward(g: &mut Graph, cfg: &DenoiserConfig, tokens: &[usize]) -> (NodeId, NodeId) {
    let n = tokens.len();
    let e = cfg.enc_dim;
    let tok = g.param_named("enc.tok");
    let emb = g.gather_rows(tok, tokens);
    let pos: Vec<f64> = (0..n).flat_map(|p| time_embedding(p, e)).collect();
    let pos = g.constant(Tensor::from_vec(n, e, pos));
    let x = g.add(emb, pos);
    let avg = g.constant(Tensor::from_vec(n, n, vec![1.0 / n as f64; n * n]));
    let mean = g.matmul(avg, x);
    let x = g.concat_cols(&[x, mean]);
    let (w1, b1) = (g.param_named("enc.w1"), g.param_named("enc.b1"));
    let h = g.linear(x, w1, b1);
    let h = g.silu(h);
    let (w2, b2) = (g.param_named("enc.w2"), g.param_named("enc.b2"));
    let out = g.linear(h, w2, b2);
    let (hw, hb) = (g.param_named("enc.head_w"), g.param_named("enc.head_b"));
    let logits = g.linear(out, hw, hb);
    (out, logits)
}

/// Per-position embeddings of a token sequence (`MASK_TOKEN` allowed).
pub fn encode_sequence(params: &ParamStore, cfg: &DenoiserConfig, tokens: &[usize]) -> Tensor {
    let mut g = Graph::new(params);
    let (out, _) = encoder_forward(&mut g, cfg, tokens);
    g.value(out).clone()
}

fn masked_loss(g: &mut Graph, cfg: &DenoiserConfig, ex: &EncoderExample, weight: f64) -> NodeId {
    let (_, logits) = encoder_forward(g, cfg, &ex.masked_tokens());
    let lp = g.log_softmax(logits);
    let (l, m) = ex.span;
    let mut sel = vec![0.0; ex.sequence.len() * NUM_TYPES];
    for p in l..l + m {
        sel[p * NUM_TYPES + ex.sequence[p].index()] = -weight / m as f64;
    }
    g.dot_const(lp, sel)
}

/// Mean masked-type cross-entropy over `corpus`.
pub fn masked_recovery_loss(params: &ParamStore, cfg: &DenoiserConfig, corpus: &[EncoderExample]) -> f64 {
    let mut g = Graph::new(params);
    let w = 1.0 / corpus.len() as f64;
    corpus.iter().map(|ex| {
        let l = masked_loss(&mut g, cfg, ex, w);
        g.scalar_value(l)
    }).sum()
}

/// Fraction of masked positions whose argmax type is correct.
pub fn masked_recovery_accuracy(params: &ParamStore, cfg: &DenoiserConfig, ex: &EncoderExample) -> f64 {
    let mut g = Graph::new(params);
    let (_, logits) = encoder_forward(&mut g, cfg, &ex.masked_tokens());
    let lv = g.value(logits);
    let (l, m) = ex.span;
    let hits = (l..l + m)
        .filter(|&p| {
            let row = lv.row(p);
            let best = (0..NUM_TYPES).fold(0, |b, k| if row[k] > row[b] { k } else { b });
            best == ex.sequence[p].index()
        })
        .count();
    hits as f64 / m as f64
}

/// Trains only the encoder parameters on masked CDR recovery; returns the
/// updated parameters and the per-step loss.
pub fn pretrain_encoder(
    params: &ParamStore,
    cfg: &DenoiserConfig,
    corpus: &[EncoderExample],
    steps: usize,
    lr: f64,
    batch: usize,
    rng: &mut crate::rng::Rng,
) -> Result<(ParamStore, Vec<f64>)> {
    if corpus.is_empty() {
        return Err(Error::Config("encoder pre-training corpus is empty".into()));
    }
    for ex in corpus {
        let (l, m) = ex.span;
        if m == 0 || l + m > ex.sequence.len() {
            return Err(Error::Config(format!("CDR span {:?} outside a sequence of length {}", ex.span, ex.sequence.len())));
        }
    }
    let mut params = params.clone();
    let mut opt = Adam::new(&params, lr, is_encoder_param);
    let mut curve = Vec::with_capacity(steps);
    let batch = batch.clamp(1, corpus.len());
    for _ in 0..steps {
        let picks: Vec<usize> = (0..batch).map(|_| rng.random_range(0..corpus.len())).collect();
        let (loss, grads) = super::loss_and_grad(&params, |g| {
            let parts: Vec<NodeId> = picks
                .iter()
                .map(|&i| masked_loss(g, cfg, &corpus[i], 1.0 / batch as f64))
                .collect();
            let all = g.concat_cols(&parts);
            Ok(g.sum(all))
        })?;
        opt.step(&mut params, &grads);
        curve.push(loss);
    }
    Ok((params, curve))
}
