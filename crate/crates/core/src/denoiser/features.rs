use crate::model::{CdrState, Role, NUM_TYPES};
use crate::scalar::{dist3, sub3};
use crate::tape::Tensor;

use super::{Conditioning, DenoiserConfig, POS_SCALE};

/// Distance RBF centres in angstrom; the width equals the spacing.
pub const RBF_CENTERS: [f64; 8] = [0.0, 2.5, 5.0, 7.5, 10.0, 12.5, 15.0, 17.5];
const RBF_WIDTH: f64 = 2.5;

/// Local displacement (3), local side-chain displacement (3), RBFs (8),
/// sequence offset (1), mask (1).
pub const PAIR_GEO_DIM: usize = 16;

/// Rigid-motion invariant inputs of one denoiser call.
///
/// Pairs are laid out residue-major with a fixed number of neighbour slots
/// per CDR residue: the `K` nearest context residues (padded with masked
/// sentinels) followed by every other CDR residue.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet {
    pub time_embedding: Vec<f64>,
    pub single: Tensor,
    pub pair_geo: Tensor,
    /// Row of the neighbour identity table (context rows first, then CDR).
    pub pair_src: Vec<usize>,
    pub mask: Vec<f64>,
    pub slots: usize,
    pub ctx_identity: Tensor,
    pub cdr_identity: Tensor,
    /// Current positions in scaled frame coordinates.
    pub z: Tensor,
    /// Residue orientation expressed in the complex frame, row-major.
    pub local_to_frame: Vec<[f64; 9]>,
}

impl FeatureSet {
    /// `m x pairs` matrix averaging each residue's unmasked pair rows.
    pub fn aggregation(&self) -> Tensor {
        let m = self.single.rows;
        let p = self.mask.len();
        let mut a = Tensor::zeros(m, p);
        for i in 0..m {
            let block = &self.mask[i * self.slots..(i + 1) * self.slots];
            let n: f64 = block.iter().sum();
            if n > 0.0 {
                for (s, &w) in block.iter().enumerate() {
                    a.data[i * p + i * self.slots + s] = w / n;
                }
            }
        }
        a
    }
}

/// Sinusoidal embedding of the diffusion step.
pub fn time_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for k in 0..half {
        let freq = (-(1000f64.ln()) * k as f64 / half as f64).exp();
        out[k] = (t as f64 * freq).sin();
        out[half + k] = (t as f64 * freq).cos();
    }
    out
}

fn role_onehot(role: Role) -> [f64; 3] {
    match role {
        Role::Framework => [1.0, 0.0, 0.0],
        Role::Antigen => [0.0, 1.0, 0.0],
        Role::Cdr => [0.0, 0.0, 1.0],
    }
}

pub fn featurize(cfg: &DenoiserConfig, cond: &Conditioning, noisy: &CdrState, t: usize) -> FeatureSet {
    let m = noisy.len();
    let n_ctx = cond.context.len();
    let k = cfg.k_neighbors;
    let slots = k + m - 1;
    let frame = &cond.frame;

    let mut single = Vec::with_capacity(m * cfg.single_dim());
    let mut z = Vec::with_capacity(m * 3);
    let mut local_to_frame = Vec::with_capacity(m);
    for (i, r) in noisy.residues.iter().enumerate() {
        let mut onehot = [0.0; NUM_TYPES];
        onehot[r.aa.index()] = 1.0;
        single.extend_from_slice(&onehot);
        let rel = (i + 1) as f64 / (m + 1) as f64;
        single.extend_from_slice(&[rel, 1.0 - rel]);
        single.extend_from_slice(cond.cdr_emb.row(i));
        let zi = frame.to_local(r.x);
        single.extend_from_slice(&zi);
        let c = frame.orient_to_local(&r.orient).row_major();
        single.extend_from_slice(&c);
        z.extend_from_slice(&zi);
        local_to_frame.push(c);
    }

    let mut geo = Vec::with_capacity(m * slots * PAIR_GEO_DIM);
    let mut src = Vec::with_capacity(m * slots);
    let mut mask = Vec::with_capacity(m * slots);
    let push_pair = |geo: &mut Vec<f64>, xi: &crate::model::ResidueState, other: &crate::model::ResidueState, offset: f64| {
        let d = sub3(other.x, xi.x);
        let local = xi.orient.apply_inverse(d);
        let sc = xi.orient.apply_inverse(sub3(other.sc_point(), xi.x));
        for v in local.iter().chain(sc.iter()) {
            geo.push(v / POS_SCALE);
        }
        let dist = dist3(other.x, xi.x);
        for c in RBF_CENTERS {
            let u = (dist - c) / RBF_WIDTH;
            geo.push((-u * u).exp());
        }
        geo.push(offset);
        geo.push(1.0);
    };
    for (i, ri) in noisy.residues.iter().enumerate() {
        let chain_i = (cond.cdr_start + i) as f64;
        let mut order: Vec<(f64, usize)> = cond
            .context
            .iter()
            .enumerate()
            .map(|(j, c)| (dist3(c.state.x, ri.x), j))
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for slot in 0..k {
            if let Some(&(_, j)) = order.get(slot) {
                let offset = match cond.chain_pos[j] {
                    Some(p) => ((p as f64 - chain_i) / m as f64).clamp(-2.0, 2.0),
                    None => 0.0,
                };
                push_pair(&mut geo, ri, &cond.context[j].state, offset);
                src.push(j);
                mask.push(1.0);
            } else {
                geo.extend(std::iter::repeat_n(0.0, PAIR_GEO_DIM));
                src.push(0);
                mask.push(0.0);
            }
        }
        for (j, rj) in noisy.residues.iter().enumerate() {
            if j == i {
                continue;
            }
            push_pair(&mut geo, ri, rj, (j as f64 - i as f64) / m as f64);
            src.push(n_ctx + j);
            mask.push(1.0);
        }
    }

    let e = cfg.enc_dim;
    let mut ctx_identity = Vec::with_capacity(n_ctx * (3 + e));
    for (j, c) in cond.context.iter().enumerate() {
        ctx_identity.extend_from_slice(&role_onehot(c.role));
        ctx_identity.extend_from_slice(cond.ctx_emb.row(j));
    }
    let mut cdr_identity = Vec::with_capacity(m * (3 + NUM_TYPES));
    for r in &noisy.residues {
        cdr_identity.extend_from_slice(&role_onehot(Role::Cdr));
        let mut onehot = [0.0; NUM_TYPES];
        onehot[r.aa.index()] = 1.0;
        cdr_identity.extend_from_slice(&onehot);
    }

    FeatureSet {
        time_embedding: time_embedding(t, cfg.time_dim),
        single: Tensor::from_vec(m, cfg.single_dim(), single),
        pair_geo: Tensor::from_vec(m * slots, PAIR_GEO_DIM, geo),
        pair_src: src,
        mask,
        slots,
        ctx_identity: Tensor::from_vec(n_ctx, 3 + e, ctx_identity),
        cdr_identity: Tensor::from_vec(m, 3 + NUM_TYPES, cdr_identity),
        z: Tensor::from_vec(m, 3, z),
        local_to_frame,
    }
}
