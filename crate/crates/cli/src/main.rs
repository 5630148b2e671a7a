use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use numkernel::Rng;

use dmbpn::corpus::{save_jsonl, synth_generate, SplitName};
use dmbpn::episodes::episode_stream;
use dmbpn::harness::dump::{dump, DumpKind};
use dmbpn::harness::{
    evaluate, evaluate_test, init_model, lambda_sweep, load_checkpoint, prepare, save_checkpoint, seeds, train_with,
    write_sweep_csv, Dataset, Fingerprint, RunConfig,
};
use dmbpn::memory::MemoryUpdateKind;
use dmbpn::model::Metric;

#[derive(Parser)]
#[command(name = "dmbpn", version, about = "Few-shot event detection with memory-based prototypes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Meta-train a model and score it on the test split.
    Train(RunArgs),
    /// Score a checkpoint on one split.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Train one model per λ and tabulate TI and EC accuracy.
    SweepLambda {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.3,0.5,0.7,0.9")]
        lambdas: Vec<f64>,
        /// Training iterations per λ; defaults to train_iters.
        #[arg(long)]
        iters: Option<usize>,
    },
    /// Write attention, prototype, episode or memory-trace dumps.
    Dump {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        kind: String,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the synthetic corpus as JSONL.
    SynthData {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Overrides applied on top of `--config` (or the defaults).
#[derive(Args, Default)]
struct RunArgs {
    /// Flat TOML file with run settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n_way: Option<usize>,
    #[arg(long)]
    k_shot: Option<usize>,
    #[arg(long)]
    q_query: Option<usize>,
    #[arg(long)]
    train_iters: Option<usize>,
    #[arg(long)]
    test_iters: Option<usize>,
    #[arg(long)]
    metric: Option<Metric>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    passes: Option<usize>,
    #[arg(long)]
    d_w: Option<usize>,
    #[arg(long)]
    d_p: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    n_h: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    memory_update: Option<MemoryUpdateKind>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    log_every: Option<usize>,
    #[arg(long)]
    val_every: Option<usize>,
    #[arg(long)]
    val_iters: Option<usize>,
    #[arg(long)]
    synth_types: Option<usize>,
    #[arg(long)]
    synth_per_type: Option<usize>,
    #[arg(long)]
    synth_vocab: Option<usize>,
    #[arg(long)]
    eval_threads: Option<usize>,
}

macro_rules! apply {
    ($cfg:ident, $args:ident, $($field:ident),*) => {
        $(if let Some(v) = $args.$field.clone() { $cfg.$field = v; })*
    };
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let args = self;
        apply!(
            cfg, args, n_way, k_shot, q_query, train_iters, test_iters, metric, lambda, passes, d_w, d_p, hidden, n_h,
            dropout, lr, seed, memory_update, output_dir, log_every, val_every, val_iters, synth_types,
            synth_per_type, synth_vocab, eval_threads
        );
        if let Some(p) = &self.data {
            cfg.data = Some(p.clone());
        }
        if let Some(p) = &self.embeddings {
            cfg.embeddings = Some(p.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn fingerprint(cfg: &RunConfig, data: &Dataset) -> Fingerprint {
    Fingerprint::new(&cfg.model(), data.vocab.len())
}

fn write_csv<T: serde::Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn run_train(cfg: RunConfig) -> Result<()> {
    let data = prepare(&cfg)?;
    fs::create_dir_all(&cfg.output_dir).with_context(|| format!("creating {}", cfg.output_dir.display()))?;
    fs::write(cfg.output_dir.join("config.toml"), cfg.to_toml_string()?)?;
    eprintln!(
        "corpus: {} mentions, {} words; types train/val/test = {}/{}/{}",
        data.mentions.len(),
        data.vocab.len(),
        data.split.train.num_types(),
        data.split.val.num_types(),
        data.split.test.num_types()
    );
    let start = Instant::now();
    let out = train_with(&cfg, &data, |row| {
        eprintln!(
            "iter {:>6}  joint {:.4}  l_ti {:.4}  l_ec {:.4}  acc {:.3}  ti {:.3}",
            row.iteration, row.joint, row.l_ti, row.l_ec, row.accuracy, row.ti_accuracy
        );
    })?;
    eprintln!("trained in {:.1}s", start.elapsed().as_secs_f64());
    let fp = fingerprint(&cfg, &data);
    write_csv(&cfg.output_dir.join("train_log.csv"), &out.log)?;
    write_csv(&cfg.output_dir.join("validation.csv"), &out.validations)?;
    save_checkpoint(cfg.output_dir.join("model.ckpt"), &out.registry, &fp)?;
    if let Some((it, best)) = &out.best {
        save_checkpoint(cfg.output_dir.join("best.ckpt"), best, &fp)?;
        eprintln!("best validation at iteration {it}");
    }
    if cfg.test_iters > 0 {
        let m = evaluate_test(&out.registry, &out.model, &cfg, &data)?;
        let json = serde_json::to_string_pretty(&m)?;
        fs::write(cfg.output_dir.join("metrics.json"), &json)?;
        println!("{json}");
    }
    Ok(())
}

fn load_model(cfg: &RunConfig, data: &Dataset, path: &Path) -> Result<(numkernel::ParamRegistry, dmbpn::model::Model)> {
    let (fresh, model) = init_model(cfg, data)?;
    let reg = load_checkpoint(path, &fingerprint(cfg, data))?;
    dmbpn::harness::evaluate::check_layout(&reg, &fresh)?;
    Ok((reg, model))
}

fn split_seed(split: SplitName) -> u64 {
    match split {
        SplitName::Train => seeds::TRAIN_EPISODES,
        SplitName::Val => seeds::VAL_EPISODES,
        SplitName::Test => seeds::TEST_EPISODES,
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Train(args) => run_train(args.resolve()?),
        Command::Eval { run, checkpoint, split } => {
            let cfg = run.resolve()?;
            let split: SplitName = split.parse()?;
            let data = prepare(&cfg)?;
            let (reg, model) = load_model(&cfg, &data, &checkpoint)?;
            let rng = Rng::new(cfg.seed).derive(split_seed(split));
            let (m, _) = evaluate(
                &reg,
                &model,
                &data,
                data.split.section(split),
                &cfg.episode(),
                cfg.test_iters,
                cfg.lambda,
                rng,
                cfg.eval_threads,
            )?;
            println!("{}", serde_json::to_string_pretty(&m)?);
            Ok(())
        }
        Command::SweepLambda { run, lambdas, iters } => {
            let cfg = run.resolve()?;
            let data = prepare(&cfg)?;
            let rows = lambda_sweep(&cfg, &data, &lambdas, iters.unwrap_or(cfg.train_iters))?;
            fs::create_dir_all(&cfg.output_dir)?;
            let path = cfg.output_dir.join("lambda_sweep.csv");
            write_sweep_csv(&path, &rows)?;
            for r in &rows {
                println!("{:.2}  ti {:.4}  ec {:.4}  f1 {:.4}", r.lambda, r.ti_accuracy, r.ec_accuracy, r.f1);
            }
            eprintln!("wrote {}", path.display());
            Ok(())
        }
        Command::Dump {
            run,
            kind,
            checkpoint,
            split,
            episodes,
            out,
        } => {
            let cfg = run.resolve()?;
            let kind: DumpKind = kind.parse()?;
            let split: SplitName = split.parse()?;
            let data = prepare(&cfg)?;
            let (reg, model) = load_model(&cfg, &data, &checkpoint)?;
            let rng = Rng::new(cfg.seed).derive(split_seed(split));
            let eps: Vec<_> = episode_stream(data.split.section(split), &cfg.episode(), episodes, rng)?.collect();
            dump(kind, &reg, &model, &data, &eps, cfg.lambda, &out)?;
            eprintln!("wrote {}", out.display());
            Ok(())
        }
        Command::SynthData { run, out } => {
            let cfg = run.resolve()?;
            if cfg.data.is_some() {
                bail!("synth-data generates a corpus; drop --data");
            }
            let mentions = synth_generate(&cfg.synth())?;
            save_jsonl(&mentions, &out)?;
            eprintln!("wrote {} mentions to {}", mentions.len(), out.display());
            Ok(())
        }
    }
}
