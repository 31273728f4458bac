//! Command-line driver: data generation, training, alignment, sampling and
//! evaluation. Every command is a pure function of (config, seed).

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cdrdiff::align::{AlignConfig, AlignOutcome};
use cdrdiff::checkpoint::Checkpoint;
use cdrdiff::config::RunConfig;
use cdrdiff::data::{read_designs, write_designs};
use cdrdiff::denoiser::pretrain_encoder;
use cdrdiff::eval::{MetricRow, METRIC_HEADER};
use cdrdiff::pipeline::{self, AlignVariant, Dataset, FrontPoint, FRONT_HEADER};
use cdrdiff::{rng, Error, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "cdrdiff", version, about = "CDR loop diffusion with energy preference alignment")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args)]
struct Global {
    /// JSON run configuration; sections: seed, paths, data, schedule, model,
    /// train, align, eval. Omitted keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override any config key, e.g. `--set align.beta=50`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Replace existing outputs.
    #[arg(long, global = true)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic complexes, annealed reference loops and the split.
    GenData {
        #[arg(long)]
        out: PathBuf,
    },
    /// Masked-sequence pre-training of the context encoder only.
    Pretrain {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Encoder pre-training followed by diffusion training (encoder frozen).
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Start from this checkpoint and skip encoder pre-training.
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Iterative preference alignment against a trained reference model.
    Align {
        #[arg(long)]
        data: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Objective weights as `att:rep` (overrides align.weights).
        #[arg(long)]
        weights: Option<String>,
        #[arg(long, value_enum, default_value = "iterative")]
        variant: Variant,
    },
    /// Align once per weight vector and write the resulting front.
    ParetoSweep {
        #[arg(long)]
        data: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated `att:rep` ratios.
        #[arg(long, default_value = "1:1,1:3,3:1")]
        weights: String,
        /// Split whose complexes are sampled for the front.
        #[arg(long, value_enum, default_value = "train")]
        split: Split,
    },
    /// Sample designs from a checkpoint.
    Sample {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Designs per complex (default eval.n_samples).
        #[arg(long)]
        n: Option<usize>,
        /// Sampling temperature (default eval.temperature).
        #[arg(long)]
        temp: Option<f64>,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
    },
    /// Per-complex metrics of a design file against the references.
    Eval {
        #[arg(long)]
        designs: PathBuf,
        /// Dataset directory holding the reference loops.
        #[arg(long)]
        refs: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "model")]
        label: String,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Variant {
    Iterative,
    Single,
    Dpo,
}

impl From<Variant> for AlignVariant {
    fn from(v: Variant) -> Self {
        match v {
            Variant::Iterative => AlignVariant::Iterative,
            Variant::Single => AlignVariant::Single,
            Variant::Dpo => AlignVariant::Dpo,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Val,
    Test,
    All,
}

/// Parses `a:b[,c:d...]`; errors name the character offset of the bad item.
fn parse_weights(s: &str) -> Result<Vec<(f64, f64)>> {
    let mut out = Vec::new();
    let mut pos = 0;
    for item in s.split(',') {
        let bad = |why: &str| Error::Config(format!("invalid weight string at position {pos}: `{item}` {why}"));
        let (a, b) = item.split_once(':').ok_or_else(|| bad("is not of the form att:rep"))?;
        let a: f64 = a.trim().parse().map_err(|_| bad("has a non-numeric attraction weight"))?;
        let b: f64 = b.trim().parse().map_err(|_| bad("has a non-numeric repulsion weight"))?;
        cdrdiff::energy::Weights::from_ratio(a, b).map_err(|_| bad("is not a valid non-negative ratio"))?;
        out.push((a, b));
        pos += item.len() + 1;
    }
    Ok(out)
}

fn load_config(g: &Global) -> Result<RunConfig> {
    let mut overrides = Vec::new();
    if let Some(s) = g.seed {
        overrides.push(("seed".to_string(), s.to_string()));
    }
    for kv in &g.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        overrides.push((k.trim().to_string(), v.trim().to_string()));
    }
    RunConfig::load(g.config.as_deref(), &overrides)
}

fn guard(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(Error::Config(format!("{} exists; pass --force to overwrite", path.display())));
    }
    Ok(())
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::Data(format!("{}: {e}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, text).map_err(io_err(path))
}

fn curve_csv(curve: &[f64], hash: &str) -> String {
    let mut s = format!("# config_hash={hash}\nstep,loss\n");
    for (k, v) in curve.iter().enumerate() {
        s.push_str(&format!("{},{v:.16e}\n", k + 1));
    }
    s
}

fn load_checkpoint(path: &Path, cfg: &RunConfig) -> Result<Checkpoint> {
    if !path.join(cdrdiff::checkpoint::MANIFEST).exists() {
        return Err(Error::Data(format!("no checkpoint at {}", path.display())));
    }
    let ck = Checkpoint::load(path)?;
    ck.check_compatible(cfg)?;
    Ok(ck)
}

fn split_entries<'a>(data: &'a Dataset, split: Split) -> Result<Vec<&'a cdrdiff::data::DatasetEntry>> {
    match split {
        Split::Train => data.train(),
        Split::Val => data.val(),
        Split::Test => data.test(),
        Split::All => Ok(data.entries.iter().collect()),
    }
}

/// Writes the selected checkpoint, loss curves and report of one run.
fn write_alignment(dir: &Path, out: &AlignOutcome, cfg: &RunConfig, acfg: &AlignConfig) -> Result<()> {
    let hash = cfg.hash();
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    Checkpoint::new(out.best.clone(), cfg, None).save(&dir.join("checkpoint"))?;
    let mut report = out.report.clone();
    for (it, curve) in out.loss_curves.iter().enumerate() {
        let name = format!("loss_iter{it}.csv");
        write_text(&dir.join(&name), &curve_csv(curve, &hash))?;
        report.iterations[it].loss_curve_path = Some(name);
    }
    let doc = serde_json::json!({
        "config_hash": hash,
        "align": acfg,
        "report": report,
    });
    write_text(&dir.join("report.json"), &(serde_json::to_string_pretty(&doc).expect("report serialises") + "\n"))
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.global)?;
    let force = cli.global.force;
    let hash = cfg.hash();
    match cli.cmd {
        Command::GenData { out } => {
            guard(&out.join(pipeline::DATASET_FILE), force)?;
            let data = Dataset::generate(&cfg)?;
            data.write(&out, &hash)?;
            let binding = data
                .entries
                .iter()
                .filter(|e| e.reference.as_ref().and_then(|d| d.energies.as_ref()).is_some_and(|r| r.dg_proxy < 0.0))
                .count();
            println!(
                "complexes: {} (train {}, val {}, test {}); references with dg_proxy < 0: {}",
                data.entries.len(),
                data.split.train.len(),
                data.split.val.len(),
                data.split.test.len(),
                binding
            );
        }
        Command::Pretrain { data, out } => {
            guard(&out, force)?;
            let data = Dataset::read(&data)?;
            let params = pipeline::initial_params(&cfg)?;
            let corpus = pipeline::encoder_corpus(&data.train()?)?;
            let mut r = rng::stream(cfg.seed, "pretrain", &[]);
            let t = &cfg.train;
            let (params, curve) = pretrain_encoder(&params, &cfg.model, &corpus, t.pretrain_steps, t.pretrain_lr, t.pretrain_batch, &mut r)?;
            Checkpoint::new(params, &cfg, Some(&r)).save(&out)?;
            write_text(&out.join("pretrain_loss.csv"), &curve_csv(&curve, &hash))?;
            println!("pretrained encoder for {} steps -> {}", curve.len(), out.display());
        }
        Command::Train { data, out, init } => {
            guard(&out, force)?;
            let data = Dataset::read(&data)?;
            let sched = cfg.schedule.build()?;
            let (params, pre_curve) = match init {
                Some(p) => (load_checkpoint(&p, &cfg)?.params, Vec::new()),
                None => {
                    let tr = pipeline::initial_params(&cfg)?;
                    let corpus = pipeline::encoder_corpus(&data.train()?)?;
                    let t = &cfg.train;
                    let mut r = rng::stream(cfg.seed, "pretrain", &[]);
                    pretrain_encoder(&tr, &cfg.model, &corpus, t.pretrain_steps, t.pretrain_lr, t.pretrain_batch, &mut r)?
                }
            };
            let mut r = rng::stream(cfg.seed, "train", &[]);
            let corpus = pipeline::diffusion_corpus(&data.train()?)?;
            let t = &cfg.train;
            let (params, curve) = cdrdiff::diffusion::train_diffusion(&params, &cfg.model, &sched, &corpus, t.steps, t.lr, t.batch, &mut r)?;
            Checkpoint::new(params, &cfg, Some(&r)).save(&out)?;
            if !pre_curve.is_empty() {
                write_text(&out.join("pretrain_loss.csv"), &curve_csv(&pre_curve, &hash))?;
            }
            write_text(&out.join("train_loss.csv"), &curve_csv(&curve, &hash))?;
            let tail = curve.iter().rev().take(50).copied().collect::<Vec<_>>();
            let last = if tail.is_empty() { f64::NAN } else { tail.iter().sum::<f64>() / tail.len() as f64 };
            println!("trained {} steps; final loss (last 50 mean) {last:.4} -> {}", curve.len(), out.display());
        }
        Command::Align { data, reference, out, weights, variant } => {
            guard(&out.join("report.json"), force)?;
            let mut cfg = cfg;
            if let Some(w) = weights {
                let ws = parse_weights(&w)?;
                if ws.len() != 1 {
                    return Err(Error::Config("align takes a single weight ratio; use pareto-sweep for several".into()));
                }
                cfg.align.weights = ws[0];
            }
            let data = Dataset::read(&data)?;
            let ck = load_checkpoint(&reference, &cfg)?;
            let acfg = AlignVariant::from(variant).apply(&cfg.align);
            let outcome = pipeline::align(&cfg, &acfg, &ck.params, &data)?;
            write_alignment(&out, &outcome, &cfg, &acfg)?;
            println!(
                "validation mean reward {:.4} -> {:.4} (policy {})",
                outcome.report.initial_val_rhat, outcome.report.best_val_rhat, outcome.report.best_iter
            );
        }
        Command::ParetoSweep { data, reference, out, weights, split } => {
            let ws = parse_weights(&weights)?;
            guard(&out.join("front.csv"), force)?;
            let data = Dataset::read(&data)?;
            let ck = load_checkpoint(&reference, &cfg)?;
            let entries = split_entries(&data, split)?;
            let complexes: Vec<_> = entries.iter().map(|e| &e.complex).collect();
            let mut front = format!("# config_hash={hash}\n{FRONT_HEADER}\n");
            for w in ws {
                let mut run_cfg = cfg.clone();
                run_cfg.align.weights = w;
                let outcome = pipeline::align(&run_cfg, &run_cfg.align, &ck.params, &data)?;
                let dir = out.join(format!("w{}-{}", w.0, w.1));
                write_alignment(&dir, &outcome, &run_cfg, &run_cfg.align)?;
                let designs = pipeline::sample_designs(&cfg, &outcome.best, &complexes, cfg.eval.n_samples, cfg.eval.temperature, "front")?;
                let p = FrontPoint::new(w, &designs, &data)?;
                println!("w {}:{} -> mean e_att {:.4}, mean e_rep {:.4}", w.0, w.1, p.mean_e_att, p.mean_e_rep);
                front.push_str(&p.csv_line());
                front.push('\n');
            }
            write_text(&out.join("front.csv"), &front)?;
        }
        Command::Sample { data, ckpt, out, n, temp, split } => {
            guard(&out, force)?;
            let data = Dataset::read(&data)?;
            let ck = load_checkpoint(&ckpt, &cfg)?;
            let entries = split_entries(&data, split)?;
            let complexes: Vec<_> = entries.iter().map(|e| &e.complex).collect();
            let n = n.unwrap_or(cfg.eval.n_samples);
            let temp = temp.unwrap_or(cfg.eval.temperature);
            if !(temp > 0.0) {
                return Err(Error::Config(format!("--temp must be positive, got {temp}")));
            }
            let designs = pipeline::sample_designs(&cfg, &ck.params, &complexes, n, temp, "sample")?;
            let spans: HashMap<String, (usize, usize)> = data.entries.iter().map(|e| (e.complex.id.clone(), e.complex.cdr_span())).collect();
            write_designs(&out, &designs, &spans, Some(&hash))?;
            println!("wrote {} designs for {} complexes -> {}", designs.len(), complexes.len(), out.display());
        }
        Command::Eval { designs, refs, out, label } => {
            guard(&out, force)?;
            let data = Dataset::read(&refs)?;
            let designs = read_designs(&designs)?;
            let rows: Vec<MetricRow> = pipeline::evaluate(&label, &designs, &data)?;
            let mut text = format!("# config_hash={hash}\n# entropy=pooled\n{METRIC_HEADER}\n");
            for r in &rows {
                text.push_str(&r.csv_line());
                text.push('\n');
            }
            write_text(&out, &text)?;
            println!("evaluated {} designs over {} complexes -> {}", designs.len(), rows.len(), out.display());
        }
    }
    std::io::stdout().flush().ok();
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
