//! Command-line front end: train (evolutionary or gradient), sweep one
//! trainer knob across values, rebuild sweep reports, and inspect
//! checkpoints.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use evonn::checkpoint::load_checkpoint;
use evonn::config::{DatasetSection, ExperimentConfig};
use evonn::experiment::{
    materialize_dataset, preset, preset_names, run_experiment, run_sweep, summarize_sweep,
    ExperimentOutcome,
};
use evonn::fitness::full_set_accuracy;

#[derive(Parser)]
#[command(
    name = "evonn",
    version,
    about = "Evolutionary and gradient training of fixed-topology networks"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train with the limited-evaluation evolutionary algorithm.
    TrainEa(TrainArgs),
    /// Train with the gradient baseline (Adam, or plain SGD per the config).
    TrainAdam(TrainArgs),
    /// Run one experiment per value of an evolutionary-trainer knob and
    /// compare the cells.
    Sweep(SweepArgs),
    /// Rebuild the cross-cell reports of an existing sweep directory.
    Summarize(SummarizeArgs),
    /// Report validation accuracy for every network in a checkpoint.
    EvalCheckpoint(EvalArgs),
}

#[derive(Args)]
struct ConfigSource {
    /// Path to a TOML experiment config.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Name of a built-in configuration.
    #[arg(long)]
    preset: Option<String>,
}

impl ConfigSource {
    fn resolve(&self) -> Result<ExperimentConfig> {
        match (&self.config, &self.preset) {
            (Some(path), None) => ExperimentConfig::load(path)
                .with_context(|| format!("loading config {}", path.display())),
            (None, Some(name)) => preset(name).ok_or_else(|| {
                anyhow::anyhow!(
                    "unknown preset \"{name}\"; available: {}",
                    preset_names().join(", ")
                )
            }),
            _ => bail!("pass exactly one of --config or --preset"),
        }
    }
}

#[derive(Args)]
struct Overrides {
    /// Base seed; repeat r uses seed + r.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of repeated runs.
    #[arg(long)]
    repeats: Option<usize>,
    /// Worker threads for batched evaluation (0 = library default).
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory, overriding run.out_dir.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory with the MNIST IDX files, overriding dataset.mnist.dir.
    #[arg(long)]
    data_dir: Option<PathBuf>,
}

impl Overrides {
    fn apply(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        if let Some(seed) = self.seed {
            cfg.run.seed = seed;
        }
        if let Some(repeats) = self.repeats {
            cfg.run.repeats = repeats;
        }
        if let Some(threads) = self.threads {
            cfg.run.threads = threads;
        }
        if let Some(out) = &self.out {
            cfg.run.out_dir = out.display().to_string();
        }
        if let Some(dir) = &self.data_dir {
            match &mut cfg.dataset {
                DatasetSection::Mnist { dir: d, .. } => *d = dir.display().to_string(),
                DatasetSection::Blobs { .. } => {
                    bail!("--data-dir applies only to configs with an IDX dataset")
                }
            }
        }
        cfg.validate()?;
        Ok(())
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    source: ConfigSource,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    source: ConfigSource,
    #[command(flatten)]
    overrides: Overrides,
    /// Evolutionary-trainer knob to vary (e.g. batch_size, alpha, rho).
    #[arg(long)]
    axis: String,
    /// Comma-separated axis values, one experiment each.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<String>,
}

#[derive(Args)]
struct SummarizeArgs {
    /// Sweep root containing `axis=value` cell directories.
    #[arg(long)]
    dir: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint file to evaluate.
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    source: ConfigSource,
    #[command(flatten)]
    overrides: Overrides,
}

fn print_outcome(outcome: &ExperimentOutcome) {
    for r in &outcome.runs {
        println!(
            "run {} (seed {}): final val acc {:.4}, best {:.4} at step {}",
            r.run, r.seed, r.final_val_acc, r.best_val_acc, r.best_step
        );
    }
    println!("wrote {}", outcome.out_dir.display());
}

fn cmd_train(args: &TrainArgs, want_ea: bool) -> Result<()> {
    let mut cfg = args.source.resolve()?;
    args.overrides.apply(&mut cfg)?;
    let kind = cfg.trainer.kind();
    match (want_ea, kind) {
        (true, "ea") | (false, "adam") | (false, "sgd") => {}
        (true, other) => bail!("train-ea needs [trainer.ea], config has [trainer.{other}]"),
        (false, other) => {
            bail!("train-adam needs [trainer.adam] or [trainer.sgd], config has [trainer.{other}]")
        }
    }
    let outcome = run_experiment(&cfg)?;
    print_outcome(&outcome);
    Ok(())
}

fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    let mut cfg = args.source.resolve()?;
    args.overrides.apply(&mut cfg)?;
    if cfg.trainer.kind() != "ea" {
        bail!("sweep needs [trainer.ea], config has [trainer.{}]", cfg.trainer.kind());
    }
    let outcome = run_sweep(&cfg, &args.axis, &args.values)?;
    for (value, accs) in &outcome.cells {
        let s = evonn::stats::summarize(accs)?;
        println!(
            "{}={}: median {:.4} (q1 {:.4}, q3 {:.4}, n {})",
            args.axis,
            value,
            s.median,
            s.q1,
            s.q3,
            accs.len()
        );
    }
    println!("wrote {}", outcome.root.display());
    Ok(())
}

fn cmd_summarize(args: &SummarizeArgs) -> Result<()> {
    let outcome = summarize_sweep(&args.dir)?;
    for (value, accs) in &outcome.cells {
        let s = evonn::stats::summarize(accs)?;
        println!(
            "{}: median {:.4} (min {:.4}, max {:.4}, n {})",
            value,
            s.median,
            s.min,
            s.max,
            accs.len()
        );
    }
    println!("rebuilt reports in {}", outcome.root.display());
    Ok(())
}

fn cmd_eval_checkpoint(args: &EvalArgs) -> Result<()> {
    let mut cfg = args.source.resolve()?;
    args.overrides.apply(&mut cfg)?;
    let params = load_checkpoint::<f32>(&args.checkpoint)
        .with_context(|| format!("loading {}", args.checkpoint.display()))?;
    let spec = cfg.network_spec()?;
    if params.spec() != &spec {
        bail!(
            "checkpoint network {:?} does not match the config's network {:?}",
            params.spec(),
            spec
        );
    }
    let (_, val_set) = materialize_dataset(&cfg.dataset)?;
    let accs = full_set_accuracy(&params, &val_set, 1024)?;
    for (i, acc) in accs.iter().enumerate() {
        println!("individual {i}: val acc {acc:.4}");
    }
    let best = accs
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .expect("checkpoints hold at least one network");
    println!("best: individual {} at {:.4}", best.0, best.1);
    Ok(())
}

fn main() -> Result<()> {
    match &Cli::parse().cmd {
        Cmd::TrainEa(args) => cmd_train(args, true),
        Cmd::TrainAdam(args) => cmd_train(args, false),
        Cmd::Sweep(args) => cmd_sweep(args),
        Cmd::Summarize(args) => cmd_summarize(args),
        Cmd::EvalCheckpoint(args) => cmd_eval_checkpoint(args),
    }
}
