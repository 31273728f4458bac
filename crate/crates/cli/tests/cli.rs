use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cdrdiff::checkpoint::Checkpoint;
use cdrdiff::config::RunConfig;
use cdrdiff::data::{read_designs, write_designs};
use cdrdiff::pipeline::{initial_params, Dataset};

/// A configuration small enough that every command finishes in seconds.
const TINY: &str = r#"{
  "seed": 31,
  "data": { "anneal_steps": 2000, "gen": { "n_antigen_res": 8, "cdr_len": 5 } },
  "schedule": { "steps": 8 },
  "model": { "hidden": 12, "depth": 1, "k_neighbors": 8, "enc_dim": 4, "enc_hidden": 8, "time_dim": 4 },
  "train": { "pretrain_steps": 5, "steps": 7, "batch": 2, "pretrain_batch": 2 },
  "align": { "iterations": 1, "samples_per_prompt": 4, "steps_per_iter": 3, "batch": 2, "val_samples": 2 },
  "eval": { "n_samples": 2 }
}"#;

struct Env {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
}

impl Env {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let config = root.join("config.json");
        fs::write(&config, TINY).unwrap();
        Env { _dir: dir, root, config }
    }

    fn path(&self, p: &str) -> PathBuf {
        self.root.join(p)
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_cdrdiff"))
            .arg("--config")
            .arg(&self.config)
            .args(args)
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> Output {
        let out = self.run(args);
        assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
        out
    }

    fn cfg(&self) -> RunConfig {
        RunConfig::load(Some(&self.config), &[]).unwrap()
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn gen_data_is_reproducible_and_guarded() {
    let env = Env::new();
    let (a, b) = (env.path("a"), env.path("b"));
    let out = env.ok(&["gen-data", "--out", s(&a)]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("train 8, val 2, test 2"));
    env.ok(&["gen-data", "--out", s(&b)]);
    for f in ["complexes.jsonl", "split.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let refused = env.run(&["gen-data", "--out", s(&a)]);
    assert_eq!(code(&refused), 2);
    assert!(stderr(&refused).contains("--force"));
    env.ok(&["--force", "gen-data", "--out", s(&a)]);
    assert_eq!(fs::read(a.join("complexes.jsonl")).unwrap(), fs::read(b.join("complexes.jsonl")).unwrap());
    let hash = env.cfg().hash();
    assert!(fs::read_to_string(a.join("complexes.jsonl")).unwrap().contains(&hash));
    assert!(fs::read_to_string(a.join("split.json")).unwrap().contains(&hash));
}

#[test]
fn zero_step_training_returns_the_initialisation() {
    let env = Env::new();
    let data = env.path("data");
    env.ok(&["gen-data", "--out", s(&data)]);
    let ck = env.path("ck");
    env.ok(&["--set", "train.pretrain_steps=0", "--set", "train.steps=0", "train", "--data", s(&data), "--out", s(&ck)]);
    let loaded = Checkpoint::load(&ck).unwrap();
    assert_eq!(loaded.params, initial_params(&env.cfg()).unwrap());
}

#[test]
fn training_writes_one_loss_row_per_step() {
    let env = Env::new();
    let data = env.path("data");
    env.ok(&["gen-data", "--out", s(&data)]);
    let ck = env.path("ck");
    env.ok(&["train", "--data", s(&data), "--out", s(&ck)]);
    let rows = |f: &str| {
        let text = fs::read_to_string(ck.join(f)).unwrap();
        assert!(text.starts_with("# config_hash="));
        text.lines().skip(2).count()
    };
    assert_eq!(rows("train_loss.csv"), 7);
    assert_eq!(rows("pretrain_loss.csv"), 5);
    let pre = env.path("pre");
    env.ok(&["pretrain", "--data", s(&data), "--out", s(&pre)]);
    assert!(pre.join("manifest.json").exists());
    // starting from the pre-trained encoder skips that stage
    let ck2 = env.path("ck2");
    env.ok(&["train", "--data", s(&data), "--out", s(&ck2), "--init", s(&pre)]);
    assert!(!ck2.join("pretrain_loss.csv").exists());
}

#[test]
fn missing_inputs_are_named_data_errors() {
    let env = Env::new();
    let out = env.run(&["train", "--data", s(&env.path("nowhere")), "--out", s(&env.path("ck"))]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("nowhere"));
    let out = env.run(&["eval", "--designs", s(&env.path("none.jsonl")), "--refs", s(&env.path("nowhere")), "--out", s(&env.path("m.csv"))]);
    assert_eq!(code(&out), 3);
}

#[test]
fn config_errors_exit_with_two() {
    let env = Env::new();
    let out = env.run(&["--set", "align.nonsense=1", "gen-data", "--out", s(&env.path("d"))]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("nonsense"));
    let out = Command::new(env!("CARGO_BIN_EXE_cdrdiff")).args(["gen-data", "--out", s(&env.path("d"))]).output().unwrap();
    assert_eq!(code(&out), 2, "seed is mandatory");
}

#[test]
fn bad_weight_strings_report_their_position() {
    let env = Env::new();
    let data = env.path("data");
    env.ok(&["gen-data", "--out", s(&data)]);
    let ck = env.path("ck");
    env.ok(&["train", "--data", s(&data), "--out", s(&ck)]);
    for (w, pos) in [("1:1,1;3", "position 4"), ("x:1", "position 0"), ("1:1,3:1,-1:2", "position 8")] {
        let out = env.run(&["pareto-sweep", "--data", s(&data), "--ref", s(&ck), "--out", s(&env.path("sw")), "--weights", w]);
        assert_eq!(code(&out), 2, "{w}");
        assert!(stderr(&out).contains(pos), "{w}: {}", stderr(&out));
    }
    let out = env.run(&["align", "--data", s(&data), "--ref", s(&ck), "--out", s(&env.path("al")), "--weights", "1:"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn align_and_sweep_write_checkpoints_and_front() {
    let env = Env::new();
    let data = env.path("data");
    env.ok(&["gen-data", "--out", s(&data)]);
    let ck = env.path("ck");
    env.ok(&["train", "--data", s(&data), "--out", s(&ck)]);
    let al = env.path("al");
    env.ok(&["align", "--data", s(&data), "--ref", s(&ck), "--out", s(&al), "--weights", "1:3"]);
    assert!(al.join("checkpoint/manifest.json").exists());
    assert!(al.join("loss_iter0.csv").exists());
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(al.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["align"]["weights"], serde_json::json!([1.0, 3.0]));
    assert_eq!(report["report"]["iterations"].as_array().unwrap().len(), 1);
    for v in ["single", "dpo"] {
        env.ok(&["align", "--data", s(&data), "--ref", s(&ck), "--out", s(&env.path(v)), "--variant", v]);
    }

    let sw = env.path("sw");
    env.ok(&["pareto-sweep", "--data", s(&data), "--ref", s(&ck), "--out", s(&sw), "--weights", "1:1,1:3,3:1"]);
    for d in ["w1-1", "w1-3", "w3-1"] {
        assert!(sw.join(d).join("checkpoint/manifest.json").exists(), "{d}");
    }
    let front = fs::read_to_string(sw.join("front.csv")).unwrap();
    let lines: Vec<&str> = front.lines().collect();
    assert!(lines[0].starts_with("# config_hash="));
    assert_eq!(lines[1], "w_att,w_rep,mean_e_att,mean_e_rep");
    assert_eq!(lines.len(), 5);
}

#[test]
fn sampling_and_evaluation() {
    let env = Env::new();
    let data = env.path("data");
    env.ok(&["gen-data", "--out", s(&data)]);
    let ck = env.path("ck");
    env.ok(&["train", "--data", s(&data), "--out", s(&ck)]);

    let empty = env.path("empty.jsonl");
    env.ok(&["sample", "--data", s(&data), "--ckpt", s(&ck), "--out", s(&empty), "--n", "0"]);
    assert!(read_designs(&empty).unwrap().is_empty());

    let (a, b) = (env.path("a.jsonl"), env.path("b.jsonl"));
    env.ok(&["sample", "--data", s(&data), "--ckpt", s(&ck), "--out", s(&a), "--n", "3", "--temp", "1.5"]);
    env.ok(&["sample", "--data", s(&data), "--ckpt", s(&ck), "--out", s(&b), "--n", "3", "--temp", "1.5"]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let designs = read_designs(&a).unwrap();
    assert_eq!(designs.len(), 3 * 2);
    assert!(designs.iter().all(|d| d.energies.is_some()));

    let bad_temp = env.run(&["sample", "--data", s(&data), "--ckpt", s(&ck), "--out", s(&env.path("t.jsonl")), "--temp", "0"]);
    assert_eq!(code(&bad_temp), 2);

    // a checkpoint from another model shape is refused
    let other = env.run(&["--set", "model.hidden=10", "sample", "--data", s(&data), "--ckpt", s(&ck), "--out", s(&env.path("c.jsonl"))]);
    assert_eq!(code(&other), 2);

    let metrics = env.path("m.csv");
    env.ok(&["eval", "--designs", s(&a), "--refs", s(&data), "--out", s(&metrics), "--label", "tiny"]);
    let text = fs::read_to_string(&metrics).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("tiny,")).count(), 2);

    // the references scored against themselves have zero gap
    let ds = Dataset::read(&data).unwrap();
    let refs: Vec<_> = ds.entries.iter().map(|e| e.reference.clone().unwrap()).collect();
    let spans: HashMap<String, (usize, usize)> = ds.entries.iter().map(|e| (e.complex.id.clone(), e.complex.cdr_span())).collect();
    let rf = env.path("refs.jsonl");
    write_designs(&rf, &refs, &spans, None).unwrap();
    let rm = env.path("rm.csv");
    env.ok(&["eval", "--designs", s(&rf), "--refs", s(&data), "--out", s(&rm), "--label", "ref"]);
    let text = fs::read_to_string(&rm).unwrap();
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let gap_cols: Vec<usize> = header.iter().enumerate().filter(|(_, h)| h.ends_with("gap")).map(|(i, _)| i).collect();
    assert_eq!(gap_cols.len(), 2);
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 12);
    for row in rows {
        let f: Vec<&str> = row.split(',').collect();
        for &c in &gap_cols {
            assert_eq!(f[c].parse::<f64>().unwrap(), 0.0, "{row}");
        }
    }
}
