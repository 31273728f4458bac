use std::collections::HashMap;

use super::*;
use crate::model::Role;
use crate::scalar::{dist3, norm3, sub3};

fn params() -> GenParams {
    GenParams::default()
}

#[test]
fn same_seed_same_complex() {
    let a = gen_complex("a", &params(), 7).unwrap();
    let b = gen_complex("a", &params(), 7).unwrap();
    assert_eq!(a, b);
    let c = gen_complex("a", &params(), 8).unwrap();
    assert_ne!(a, c);
}

#[test]
fn geometry_post_checks_over_100_seeds() {
    let p = params();
    for seed in 0..100 {
        let c = gen_complex("g", &p, seed).unwrap();
        let d = norm3(sub3(c.antigen_centroid(), c.anchor_midpoint()));
        assert!(d >= 0.5 * p.box_scale && d <= 1.5 * p.box_scale, "seed {seed}: centroid distance {d}");
        let ag: Vec<_> = c.antigen().map(|r| r.x).collect();
        assert_eq!(ag.len(), p.n_antigen_res);
        for i in 0..ag.len() {
            for j in 0..i {
                assert!(dist3(ag[i], ag[j]) > 1.5, "seed {seed}: residues {i},{j}");
            }
        }
        let (a, b) = c.anchors();
        assert!((dist3(a.x, b.x) - p.anchor_gap).abs() < 1e-9);
        assert_eq!(c.cdr_span(), (p.flank, p.cdr_len));
    }
}

#[test]
fn invalid_params_are_config_errors() {
    let p = GenParams { cdr_len: 0, ..params() };
    assert!(matches!(gen_complex("x", &p, 0), Err(Error::Config(_))));
}

#[test]
fn zero_steps_returns_initialisation() {
    let c = gen_complex("z", &params(), 3).unwrap();
    let d = gen_reference_cdr(&c, 11, 0);
    assert_eq!(d.cdr, initial_loop(&c, 11));
    assert!(d.energies.is_some());
}

#[test]
fn annealing_never_worsens_the_objective() {
    let c = gen_complex("o", &params(), 4).unwrap();
    let init = objective(&c, &initial_loop(&c, 5));
    for steps in [1, 10, 500] {
        let d = gen_reference_cdr(&c, 5, steps);
        assert!(objective(&c, &d.cdr) <= init);
    }
}

#[test]
fn connectivity_penalty_counts_anchor_links() {
    let c = gen_complex("p", &params(), 1).unwrap();
    let (a, b) = c.anchors();
    let m = c.cdr_len();
    // residues evenly spread between anchors: all links equal
    let mut cdr = initial_loop(&c, 0);
    for (i, r) in cdr.residues.iter_mut().enumerate() {
        let f = (i + 1) as f64 / (m + 1) as f64;
        r.x = crate::scalar::add3(crate::scalar::scale3(a.x, 1.0 - f), crate::scalar::scale3(b.x, f));
    }
    let link = params().anchor_gap / (m + 1) as f64;
    let expect = (m + 1) as f64 * (link - CA_SPACING).powi(2);
    assert!((connectivity_penalty(&c, &cdr) - expect).abs() < 1e-9);
}

#[test]
fn references_bind_on_most_seeds() {
    // Fixture: complexes and annealing from seeds 0..20 at the default step count.
    let p = params();
    let binding = (0..20u64)
        .filter(|&s| {
            let c = gen_complex("r", &p, s).unwrap();
            let d = gen_reference_cdr(&c, 1000 + s, 20_000);
            d.energies.unwrap().dg_proxy < 0.0
        })
        .count();
    assert!(binding >= 18, "only {binding} of 20 references bind");
}

fn small_dataset(n: usize) -> Vec<DatasetEntry> {
    let cfg = DataConfig {
        n_train: n,
        n_val: 0,
        n_test: 0,
        anneal_steps: 50,
        gen: params(),
    };
    generate_dataset(&cfg, 99).unwrap()
}

#[test]
fn dataset_round_trip_is_bit_exact() {
    let entries = small_dataset(10);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.jsonl");
    write_dataset(&path, &entries, Some("abc")).unwrap();
    let back = read_dataset(&path).unwrap();
    assert_eq!(back.len(), 10);
    for (a, b) in entries.iter().zip(&back) {
        assert_eq!(a.complex, b.complex);
        let (ra, rb) = (a.reference.as_ref().unwrap(), b.reference.as_ref().unwrap());
        assert_eq!(ra.cdr, rb.cdr);
        assert_eq!(ra.seed, rb.seed);
        for (x, y) in a.complex.context().iter().zip(b.complex.context()) {
            for k in 0..3 {
                assert_eq!(x.state.x[k].to_bits(), y.state.x[k].to_bits());
            }
            for (u, v) in x.state.orient.row_major().iter().zip(y.state.orient.row_major()) {
                assert_eq!(u.to_bits(), v.to_bits());
            }
        }
    }
    // writing again gives identical bytes
    let again = dir.path().join("e.jsonl");
    write_dataset(&again, &back, Some("abc")).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn designs_round_trip() {
    let entries = small_dataset(3);
    let designs: Vec<_> = entries.iter().map(|e| e.reference.clone().unwrap()).collect();
    let spans: HashMap<_, _> = entries.iter().map(|e| (e.complex.id.clone(), e.complex.cdr_span())).collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.jsonl");
    write_designs(&path, &designs, &spans, None).unwrap();
    assert_eq!(read_designs(&path).unwrap(), designs);
    write_designs(&path, &[], &spans, None).unwrap();
    assert!(read_designs(&path).unwrap().is_empty());
}

#[test]
fn truncated_file_fails_at_the_cut_line() {
    let entries = small_dataset(3);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.jsonl");
    write_dataset(&path, &entries, None).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let cut = text.len() - text.lines().last().unwrap().len() / 2;
    std::fs::write(&path, &text[..cut]).unwrap();
    match read_dataset(&path) {
        Err(Error::Malformed { line, .. }) => assert_eq!(line, 3),
        other => panic!("expected malformed, got {other:?}"),
    }
}

#[test]
fn malformed_fields_are_named() {
    let entries = small_dataset(1);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.jsonl");
    write_dataset(&path, &entries, None).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();

    let bad = text.replacen("\"aa\":", "\"aa\":25,\"_aa\":", 1);
    std::fs::write(&path, &bad).unwrap();
    let err = read_dataset(&path).unwrap_err().to_string();
    assert!(err.contains(":1:") && err.contains("_aa"), "{err}");

    let v: serde_json::Value = serde_json::from_str(text.trim()).unwrap();
    let mut v2 = v.clone();
    v2["residues"][0]["aa"] = 25.into();
    std::fs::write(&path, format!("{v2}\n")).unwrap();
    let err = read_dataset(&path).unwrap_err().to_string();
    assert!(err.contains("residues[0].aa"), "{err}");

    let mut v3 = v.clone();
    v3["residues"][1].as_object_mut().unwrap().remove("x");
    std::fs::write(&path, format!("{text}{v3}\n")).unwrap();
    let err = read_dataset(&path).unwrap_err().to_string();
    assert!(err.contains(":2:") && err.contains("`x`"), "{err}");

    let mut v4 = v;
    v4["residues"][2]["orient"][0] = 2.0.into();
    std::fs::write(&path, format!("{v4}\n")).unwrap();
    let err = read_dataset(&path).unwrap_err().to_string();
    assert!(err.contains("residues[2].orient"), "{err}");
}

#[test]
fn roles_keep_chain_order() {
    let entries = small_dataset(1);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.jsonl");
    write_dataset(&path, &entries, None).unwrap();
    let v: serde_json::Value = serde_json::from_str(std::fs::read_to_string(&path).unwrap().trim()).unwrap();
    let roles: Vec<String> = v["residues"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["role"].as_str().unwrap().to_string())
        .collect();
    let p = params();
    assert!(roles[..p.flank].iter().all(|r| r == "framework"));
    assert!(roles[p.flank..p.flank + p.cdr_len].iter().all(|r| r == "cdr"));
    assert!(roles[p.flank + p.cdr_len..2 * p.flank + p.cdr_len].iter().all(|r| r == "framework"));
    assert!(roles[2 * p.flank + p.cdr_len..].iter().all(|r| r == "antigen"));
    assert_eq!(entries[0].complex.context()[0].role, Role::Framework);
}

#[test]
fn split_is_deterministic_partition() {
    let ids: Vec<String> = (0..12).map(complex_id).collect();
    let s = SplitManifest::by_id_hash(&ids, 8, 2);
    assert_eq!((s.train.len(), s.val.len(), s.test.len()), (8, 2, 2));
    let mut all: Vec<String> = s.train.iter().chain(&s.val).chain(&s.test).cloned().collect();
    all.sort();
    assert_eq!(all, ids);
    let mut shuffled = ids.clone();
    shuffled.reverse();
    assert_eq!(SplitManifest::by_id_hash(&shuffled, 8, 2), s);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("split.json");
    s.write(&path).unwrap();
    assert_eq!(SplitManifest::read(&path).unwrap(), s);
}
