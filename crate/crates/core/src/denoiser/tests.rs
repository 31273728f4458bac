use super::encoder::{masked_recovery_accuracy, masked_recovery_loss};
use super::*;
use crate::geom::{exp_map, uniform_rotation, AxisAngle};
use crate::model::fixtures::{toy_complex, toy_cdr};
use crate::model::{AminoAcid, RigidMotion};
use crate::rng;
use crate::tape::gradient_check;

fn small_cfg() -> DenoiserConfig {
    DenoiserConfig {
        hidden: 6,
        depth: 2,
        k_neighbors: 4,
        enc_dim: 4,
        enc_hidden: 5,
        time_dim: 4,
    }
}

fn jittered(cfg: &DenoiserConfig, seed: u64) -> ParamStore {
    let mut r = rng::from_seed(seed);
    let mut p = init_params(cfg, &mut r).unwrap();
    jitter_params(&mut p, 0.3, &mut r);
    p
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn zero_heads_are_identity() {
    let cfg = DenoiserConfig::default();
    let params = init_params(&cfg, &mut rng::from_seed(1)).unwrap();
    let complex = toy_complex(5);
    let cond = Conditioning::new(&params, &cfg, &complex).unwrap();
    let cdr = toy_cdr(5);
    let pred = denoise(&params, &cfg, &cond, &cdr, 40).unwrap();
    for (i, r) in cdr.residues.iter().enumerate() {
        assert!(pred.logits[i].iter().all(|&l| l == 0.0));
        assert!(max_diff(&pred.x_pred[i], &r.x) < 1e-12);
        assert!(pred.rot_pred[i].frobenius_sq(&r.orient) < 1e-24);
    }
}

#[test]
fn features_are_rigid_invariant() {
    let cfg = DenoiserConfig::default();
    let params = jittered(&cfg, 2);
    let complex = toy_complex(6);
    let cdr = toy_cdr(6);
    let mut r = rng::from_seed(3);
    for _ in 0..5 {
        let rot = uniform_rotation(&mut r);
        let t = [r.random::<f64>() * 40.0 - 20.0, 7.0, -3.0];
        let c2 = complex.apply_rigid(&rot, t);
        let a = featurize(&cfg, &Conditioning::new(&params, &cfg, &complex).unwrap(), &cdr, 10);
        let b = featurize(&cfg, &Conditioning::new(&params, &cfg, &c2).unwrap(), &cdr.apply_rigid(&rot, t), 10);
        assert_eq!(a.pair_src, b.pair_src);
        assert_eq!(a.mask, b.mask);
        assert!(max_diff(&a.single.data, &b.single.data) < 1e-9);
        assert!(max_diff(&a.pair_geo.data, &b.pair_geo.data) < 1e-9);
        assert!(max_diff(&a.z.data, &b.z.data) < 1e-9);
        assert!(max_diff(&a.ctx_identity.data, &b.ctx_identity.data) < 1e-12);
    }
}

#[test]
fn short_context_is_padded_and_masked() {
    let cfg = DenoiserConfig { k_neighbors: 10, ..DenoiserConfig::default() };
    let params = init_params(&cfg, &mut rng::from_seed(4)).unwrap();
    let complex = toy_complex(3);
    let cond = Conditioning::new(&params, &cfg, &complex).unwrap();
    let f = featurize(&cfg, &cond, &toy_cdr(3), 5);
    let n_ctx = complex.context().len();
    assert_eq!(f.slots, 10 + 2);
    for i in 0..3 {
        let block = &f.mask[i * f.slots..(i + 1) * f.slots];
        assert!(block[..n_ctx].iter().all(|&v| v == 1.0));
        assert!(block[n_ctx..10].iter().all(|&v| v == 0.0));
        assert!(block[10..].iter().all(|&v| v == 1.0));
        for s in n_ctx..10 {
            let row = f.pair_geo.row(i * f.slots + s);
            assert!(row.iter().all(|&v| v == 0.0));
        }
    }
    let agg = f.aggregation();
    for i in 0..3 {
        let s: f64 = agg.row(i).iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }
}

#[test]
fn timestep_changes_only_time_embedding() {
    let cfg = DenoiserConfig::default();
    let params = jittered(&cfg, 5);
    let complex = toy_complex(4);
    let cond = Conditioning::new(&params, &cfg, &complex).unwrap();
    let a = featurize(&cfg, &cond, &toy_cdr(4), 3);
    let mut b = featurize(&cfg, &cond, &toy_cdr(4), 77);
    assert_ne!(a.time_embedding, b.time_embedding);
    b.time_embedding = a.time_embedding.clone();
    assert_eq!(a, b);
}

#[test]
fn denoise_commutes_with_rigid_motion() {
    let cfg = DenoiserConfig::default();
    let params = jittered(&cfg, 6);
    let complex = toy_complex(6);
    let cdr = toy_cdr(6);
    let mut r = rng::from_seed(7);
    let cond = Conditioning::new(&params, &cfg, &complex).unwrap();
    let base = denoise(&params, &cfg, &cond, &cdr, 25).unwrap();
    assert!(base.logits.iter().flatten().any(|&v| v != 0.0));
    for _ in 0..5 {
        let rot = uniform_rotation(&mut r);
        let t = [3.0, r.random::<f64>() * 50.0, -8.0];
        let c2 = complex.apply_rigid(&rot, t);
        let cond2 = Conditioning::new(&params, &cfg, &c2).unwrap();
        let moved = denoise(&params, &cfg, &cond2, &cdr.apply_rigid(&rot, t), 25).unwrap();
        for i in 0..6 {
            assert!(max_diff(&base.logits[i], &moved.logits[i]) < 1e-9);
            let x = crate::scalar::add3(rot.apply(base.x_pred[i]), t);
            assert!(max_diff(&x, &moved.x_pred[i]) < 1e-6);
            let o = rot.compose(&base.rot_pred[i]);
            assert!(o.frobenius_sq(&moved.rot_pred[i]).sqrt() < 1e-6);
        }
    }
}

#[test]
fn forward_gradients_match_finite_differences() {
    let cfg = small_cfg();
    let params = jittered(&cfg, 8);
    let complex = toy_complex(2);
    let cond = Conditioning::new(&params, &cfg, &complex).unwrap();
    let feats = featurize(&cfg, &cond, &toy_cdr(2), 9);
    let weights: Vec<f64> = (0..40).map(|i| ((i * 37 % 11) as f64 - 5.0) / 7.0).collect();
    let check = gradient_check(&params, 1e-3, 1e-6, |g| {
        let h = forward(g, &cfg, &feats);
        let lp = g.log_softmax(h.logits);
        let a = g.dot_const(lp, weights.clone());
        let zz = g.square(h.z_pred);
        let b = g.sum(zz);
        let c = g.dot_const(h.rot_corr, weights[..18].to_vec());
        let s = g.add(a, b);
        g.add(s, c)
    });
    // encoder parameters are frozen constants inside the denoiser
    assert!(check.max_rel_err <= 1e-5, "{check:?}");
}

#[test]
fn loss_and_grad_basic_contracts() {
    let cfg = small_cfg();
    let params = jittered(&cfg, 9);
    let (v, g) = loss_and_grad(&params, |g| Ok(g.scalar(3.5))).unwrap();
    assert_eq!(v, 3.5);
    assert!(g.flat().iter().all(|&x| x == 0.0));

    let (v, g) = loss_and_grad(&params, |g| {
        let parts: Vec<_> = (0..params.len())
            .map(|i| {
                let p = g.param(i);
                let sq = g.square(p);
                g.sum(sq)
            })
            .collect();
        let all = g.concat_cols(&parts);
        Ok(g.sum(all))
    })
    .unwrap();
    assert!((v - params.norm().powi(2)).abs() < 1e-9);
    for (a, b) in g.flat().iter().zip(params.flat()) {
        assert!((a - 2.0 * b).abs() <= 1e-12);
    }

    let err = loss_and_grad(&params, |g| Ok(g.scalar(f64::NAN))).unwrap_err();
    assert!(matches!(err, Error::Numeric(ref m) if m.contains("den.type_w")));
}

fn example() -> EncoderExample {
    let seq: Vec<AminoAcid> = "EVQLVESGGTARDYWGQGT".chars().map(|c| AminoAcid::from_letter(c).unwrap()).collect();
    EncoderExample { sequence: seq, span: (9, 6) }
}

#[test]
fn encoder_starts_uniform() {
    let cfg = DenoiserConfig::default();
    let params = init_params(&cfg, &mut rng::from_seed(10)).unwrap();
    let l = masked_recovery_loss(&params, &cfg, &[example()]);
    assert!((l - 20f64.ln()).abs() < 1e-12);
}

#[test]
fn pretraining_with_zero_steps_is_a_no_op() {
    let cfg = DenoiserConfig::default();
    let params = jittered(&cfg, 11);
    let (out, curve) = pretrain_encoder(&params, &cfg, &[example()], 0, 1e-3, 4, &mut rng::from_seed(0)).unwrap();
    assert!(curve.is_empty());
    assert_eq!(out, params);
    let err = pretrain_encoder(&params, &cfg, &[], 5, 1e-3, 4, &mut rng::from_seed(0)).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
}

#[test]
fn pretraining_memorises_a_single_sequence() {
    let cfg = DenoiserConfig::default();
    let params = init_params(&cfg, &mut rng::from_seed(12)).unwrap();
    let ex = example();
    let (out, curve) = pretrain_encoder(&params, &cfg, std::slice::from_ref(&ex), 500, 1e-3, 1, &mut rng::from_seed(1)).unwrap();
    assert_eq!(curve.len(), 500);
    assert!(masked_recovery_accuracy(&out, &cfg, &ex) >= 0.95);
    for (i, (name, t)) in out.iter().enumerate() {
        if !is_encoder_param(name) {
            assert_eq!(t, params.tensor(i), "{name} changed");
        }
    }
}

#[test]
fn adam_clips_large_gradients() {
    let mut p = ParamStore::default();
    p.insert("w", Tensor::from_vec(1, 2, vec![0.0, 0.0]));
    let mut opt = Adam::new(&p, 0.1, |_| true);
    let g = Gradients { tensors: vec![Tensor::from_vec(1, 2, vec![3000.0, 4000.0])] };
    let norm = opt.step(&mut p, &g);
    assert_eq!(norm, 5000.0);
    // first Adam step moves each coordinate by lr in the gradient's sign
    assert!((p.tensor(0).data[0] + 0.1).abs() < 1e-6);
    let frozen = Adam::new(&p, 0.1, |_| false).step(&mut p.clone(), &g);
    assert_eq!(frozen, 0.0);
}

#[test]
fn correction_matches_exp() {
    let o = exp_map(AxisAngle([0.3, -0.2, 0.9]));
    let c = apply_correction(&o, [0.0; 3]);
    assert_eq!(c, o.compose(&Rotation::identity()));
}
