use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::energy::cdr_ag_energies;
use crate::geom::{exp_map, uniform_rotation, AxisAngle};
use crate::model::{AminoAcid, CdrState, ComplexInstance, Design, ResidueState, NUM_TYPES};
use crate::rng;
use crate::scalar::{add3, dist3, normalize3, scale3, sub3};

use super::gen::CA_SPACING;

const T_START: f64 = 10.0;
const T_END: f64 = 0.01;
const POS_STEP: f64 = 0.3;
// Per-axis tangent deviation; the expected jitter angle is about 0.1 rad.
const ROT_STEP: f64 = 0.1 / 1.732_050_807_568_877_2;

/// Squared deviation from ideal C-alpha spacing along anchor, CDR, anchor.
pub fn connectivity_penalty(complex: &ComplexInstance, cdr: &CdrState) -> f64 {
    let (a, b) = complex.anchors();
    let mut chain = Vec::with_capacity(cdr.len() + 2);
    chain.push(a.x);
    chain.extend(cdr.residues.iter().map(|r| r.x));
    chain.push(b.x);
    chain.windows(2).map(|w| (dist3(w[0], w[1]) - CA_SPACING).powi(2)).sum()
}

/// Annealing objective: CDR internal energy plus interface energy plus the
/// chain connectivity penalty.
pub fn objective(complex: &ComplexInstance, cdr: &CdrState) -> f64 {
    let e = cdr_ag_energies(complex, cdr);
    e.e_intra + e.dg_proxy + connectivity_penalty(complex, cdr)
}

/// Random starting loop: a jittered arc from anchor to anchor bulging toward
/// the antigen, random types and orientations.
pub fn initial_loop(complex: &ComplexInstance, seed: u64) -> CdrState {
    let mut rng = rng::stream(seed, "anneal-init", &[]);
    let (a, b) = complex.anchors();
    let m = complex.cdr_len();
    let mid = complex.anchor_midpoint();
    let up = normalize3(sub3(complex.antigen_centroid(), mid));
    let residues = (0..m)
        .map(|i| {
            let f = (i + 1) as f64 / (m + 1) as f64;
            let bulge = 4.0 * (std::f64::consts::PI * f).sin();
            let jitter: [f64; 3] = std::array::from_fn(|_| 0.5 * rng.sample::<f64, _>(StandardNormal));
            let x = add3(add3(add3(scale3(a.x, 1.0 - f), scale3(b.x, f)), scale3(up, bulge)), jitter);
            let aa = AminoAcid::new(rng.random_range(0..NUM_TYPES)).expect("type index in range");
            ResidueState::new(aa, x, uniform_rotation(&mut rng))
        })
        .collect();
    CdrState::new(residues)
}

/// Reference CDR by simulated annealing with geometric cooling from
/// `T_START` to `T_END`. Each step mutates one residue's type, position or
/// orientation and is accepted by the Metropolis rule; the lowest-objective
/// state visited is returned. Zero steps return the random initialisation.
pub fn gen_reference_cdr(complex: &ComplexInstance, seed: u64, steps: usize) -> Design {
    let mut cur = initial_loop(complex, seed);
    let mut rng = rng::stream(seed, "anneal", &[]);
    let m = cur.len();
    let mut cur_obj = objective(complex, &cur);
    let mut best = cur.clone();
    let mut best_obj = cur_obj;
    let decay = if steps > 1 { (T_END / T_START).powf(1.0 / (steps - 1) as f64) } else { 1.0 };
    let mut temp = T_START;
    for _ in 0..steps {
        let i = rng.random_range(0..m);
        let mut prop = cur.clone();
        let r = &mut prop.residues[i];
        match rng.random_range(0..3) {
            0 => r.aa = AminoAcid::new(rng.random_range(0..NUM_TYPES)).expect("type index in range"),
            1 => {
                let d: [f64; 3] = std::array::from_fn(|_| POS_STEP * rng.sample::<f64, _>(StandardNormal));
                r.x = add3(r.x, d);
            }
            _ => {
                let v: [f64; 3] = std::array::from_fn(|_| ROT_STEP * rng.sample::<f64, _>(StandardNormal));
                r.orient = r.orient.compose(&exp_map(AxisAngle(v)));
            }
        }
        let obj = objective(complex, &prop);
        let accept = obj <= cur_obj || rng.random::<f64>() < (-(obj - cur_obj) / temp).exp();
        if accept {
            cur = prop;
            cur_obj = obj;
            if cur_obj < best_obj {
                best_obj = cur_obj;
                best = cur.clone();
            }
        }
        temp *= decay;
    }
    Design::new(complex.id.clone(), best, seed).with_energies(complex)
}
