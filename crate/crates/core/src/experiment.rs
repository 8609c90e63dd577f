//! Experiment driver: materializes the configured dataset, runs the
//! configured trainer for each repeat, and writes results as CSV files plus
//! per-run best-network checkpoints.
//!
//! All value-bearing outputs (`metrics.csv`, `runs.csv`, sweep reports) are
//! byte-deterministic for a given config: reruns and different thread counts
//! produce identical files. Wall-clock timings go to a separate
//! `timing.csv` so the deterministic files stay comparable.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use thiserror::Error;

use crate::checkpoint::{save_checkpoint, CheckpointError};
use crate::config::{
    ConfigError, DatasetSection, EaParams, ExperimentConfig, NetworkSection, RunSection,
    TrainerSection,
};
use crate::data::{load_idx, synthetic_blobs, DataError, Dataset};
use crate::evo::{EvalState, EvoError, SigmaMode};
use crate::fitness::{full_set_accuracy, FitnessError};
use crate::grad::{train, GradError};
use crate::model::{ModelError, PopulationParams};
use crate::rng::{Purpose, RunRng};
use crate::scalar::Scalar;
use crate::stats::{mann_whitney_u_one_sided, relative_improvement, summarize, StatsError};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Evo(#[from] EvoError),
    #[error(transparent)]
    Grad(#[from] GradError),
    #[error(transparent)]
    Fitness(#[from] FitnessError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("threadpool: {0}")]
    ThreadPool(String),
    #[error("{0}")]
    Invalid(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Standard training-set IDX file names expected inside the MNIST directory.
pub const MNIST_TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const MNIST_TRAIN_LABELS: &str = "train-labels-idx1-ubyte";

/// Builds the `(train, validation)` pair a config describes.
pub fn materialize_dataset(
    section: &DatasetSection,
) -> Result<(Dataset<f32>, Dataset<f32>), ExperimentError> {
    match section {
        DatasetSection::Mnist {
            dir,
            val_examples,
            split_seed,
        } => {
            let dir = Path::new(dir);
            let ds = load_idx::<f32>(
                dir.join(MNIST_TRAIN_IMAGES),
                dir.join(MNIST_TRAIN_LABELS),
            )?;
            if *val_examples >= ds.len() {
                return Err(ExperimentError::Invalid(format!(
                    "val_examples {} consumes the whole {}-example dataset",
                    val_examples,
                    ds.len()
                )));
            }
            let (train_set, val_set) = ds.split(ds.len() - val_examples, *val_examples, *split_seed)?;
            Ok((train_set, val_set))
        }
        DatasetSection::Blobs {
            classes,
            height,
            width,
            train_per_class,
            val_per_class,
            separation,
            seed,
        } => {
            let per_class = train_per_class + val_per_class;
            let ds = synthetic_blobs::<f32>(*classes, (*height, *width), per_class, *separation, *seed)?;
            let n_train = classes * train_per_class;
            let n_val = classes * val_per_class;
            let (train_set, val_set) = ds.split(n_train, n_val, *seed)?;
            Ok((train_set, val_set))
        }
    }
}

/// One repeat's outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub run: usize,
    pub seed: u64,
    /// Validation accuracy of the network selected at the end of the run.
    pub final_val_acc: f64,
    /// Best validation accuracy observed at any probe during the run.
    pub best_val_acc: f64,
    /// Step (generation or epoch) where the best probe occurred.
    pub best_step: usize,
}

#[derive(Debug)]
pub struct ExperimentOutcome {
    pub runs: Vec<RunSummary>,
    pub out_dir: PathBuf,
}

impl ExperimentOutcome {
    pub fn final_val_accs(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.final_val_acc).collect()
    }
}

// Shortest round-trip decimal for a float, so CSV bytes never depend on
// formatting state.
fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

struct MetricsRow {
    run: usize,
    seed: u64,
    step: usize,
    fitness: f64,
    val_acc: Option<f64>,
    sigma_mean: Option<f64>,
    sigma_std: Option<f64>,
}

fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from("run,seed,step,fitness,val_acc,sigma_mean,sigma_std\n");
    for r in rows {
        let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.run,
            r.seed,
            r.step,
            fmt_f64(r.fitness),
            opt(r.val_acc),
            opt(r.sigma_mean),
            opt(r.sigma_std),
        );
    }
    out
}

fn runs_csv(rows: &[RunSummary]) -> String {
    let mut out = String::from("run,seed,final_val_acc,best_val_acc,best_step\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.run,
            r.seed,
            fmt_f64(r.final_val_acc),
            fmt_f64(r.best_val_acc),
            r.best_step
        );
    }
    out
}

fn write_file(path: &Path, contents: &str) -> Result<(), ExperimentError> {
    std::fs::write(path, contents).map_err(io_err(path))
}

/// Mean and population standard deviation of the per-individual mutation
/// strengths, when the run tracks them.
fn sigma_stats<F: crate::scalar::Scalar>(genes: &[F]) -> (f64, f64) {
    let n = genes.len() as f64;
    let mean = genes.iter().map(|g| g.as_f64()).sum::<f64>() / n;
    let var = genes
        .iter()
        .map(|g| {
            let d = g.as_f64() - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    (mean, var.sqrt())
}

struct EaRunResult {
    rows: Vec<MetricsRow>,
    summary: RunSummary,
    best_genome: Vec<f32>,
}

fn run_ea_once(
    run: usize,
    run_seed: u64,
    spec: &crate::model::NetworkSpec,
    ea: &EaParams,
    run_cfg: &RunSection,
    train_set: &Dataset<f32>,
    val_set: &Dataset<f32>,
) -> Result<EaRunResult, ExperimentError> {
    let evo_cfg = ea.to_evo_config()?;
    let rng = RunRng::new(run_seed);

    let mut init_rng = rng.stream(Purpose::Init, 0, 0);
    let mut params =
        PopulationParams::<f32>::glorot_uniform_init(spec.clone(), evo_cfg.lambda, &mut init_rng)?;
    if matches!(evo_cfg.sigma_mode, SigmaMode::SelfAdaptive { .. }) {
        params.set_uniform_sigma_genes(evo_cfg.sigma as f32);
    }

    let batch_for = |generation: usize| {
        let mut batch_rng = rng.stream(Purpose::Batch, generation as u64, 0);
        train_set.sample_batch(
            evo_cfg.batch_size.min(train_set.len()),
            &mut batch_rng,
            evo_cfg.batch_replacement,
        )
    };

    let mut state = EvalState::new(params, &batch_for(0)?)?;
    let mut rows = Vec::new();

    let probe = |state: &EvalState<f32>,
                 rows: &mut Vec<MetricsRow>,
                 best: &mut (f64, usize)|
     -> Result<(), ExperimentError> {
        let idx = state.best_index();
        let genome = state.params.flatten(idx)?;
        let probe_net = PopulationParams::from_genome(state.params.spec().clone(), &genome)?;
        let val_acc = full_set_accuracy(&probe_net, val_set, 1024)?[0];
        let (sigma_mean, sigma_std) = match state.params.sigma_genes() {
            Some(genes) => sigma_stats(genes),
            None => (
                evo_cfg
                    .scheduled_sigma(state.generation)
                    .expect("non-adaptive modes always have a scheduled sigma"),
                0.0,
            ),
        };
        rows.push(MetricsRow {
            run,
            seed: run_seed,
            step: state.generation,
            fitness: state.f_adj[idx].as_f64(),
            val_acc: Some(val_acc),
            sigma_mean: Some(sigma_mean),
            sigma_std: Some(sigma_std),
        });
        if val_acc > best.0 {
            *best = (val_acc, state.generation);
        }
        Ok(())
    };

    let mut best = (f64::NEG_INFINITY, 0usize);
    probe(&state, &mut rows, &mut best)?;
    for g in 1..=evo_cfg.generations {
        state = crate::evo::step(&state, &batch_for(g)?, &evo_cfg, &rng)?;
        if g % run_cfg.val_interval == 0 || g == evo_cfg.generations {
            probe(&state, &mut rows, &mut best)?;
        }
    }
    let (mut best_val_acc, mut best_step) = best;

    // Final selection: among the elite ranks of the last generation, keep
    // the individual with the highest full-validation accuracy (ties fall
    // to the better fitness rank).
    let (n_elite, _, _) = evo_cfg.offspring_counts()?;
    let order = crate::evo::rank_descending(&state.f_adj);
    let mut final_val_acc = f64::NEG_INFINITY;
    let mut final_genome = Vec::new();
    for &idx in order.iter().take(n_elite.max(1)) {
        let genome = state.params.flatten(idx)?;
        let net = PopulationParams::from_genome(state.params.spec().clone(), &genome)?;
        let acc = full_set_accuracy(&net, val_set, 1024)?[0];
        if acc > final_val_acc {
            final_val_acc = acc;
            final_genome = genome;
        }
    }
    if final_val_acc > best_val_acc {
        best_val_acc = final_val_acc;
        best_step = state.generation;
    }

    Ok(EaRunResult {
        rows,
        summary: RunSummary {
            run,
            seed: run_seed,
            final_val_acc,
            best_val_acc,
            best_step,
        },
        best_genome: final_genome,
    })
}

fn run_grad_once(
    run: usize,
    run_seed: u64,
    spec: &crate::model::NetworkSpec,
    cfg: &ExperimentConfig,
    train_set: &Dataset<f32>,
    val_set: &Dataset<f32>,
) -> Result<EaRunResult, ExperimentError> {
    let train_cfg = cfg.train_config()?;
    let mut rows = Vec::new();
    let result = train(spec, train_set, val_set, &train_cfg, run_seed, |rec| {
        rows.push(MetricsRow {
            run,
            seed: run_seed,
            step: rec.epoch,
            // Negated mean loss keeps the fitness column higher-is-better
            // across both trainer families.
            fitness: -rec.mean_loss,
            val_acc: Some(rec.val_accuracy),
            sigma_mean: None,
            sigma_std: None,
        });
    })?;
    Ok(EaRunResult {
        rows,
        summary: RunSummary {
            run,
            seed: run_seed,
            final_val_acc: result.final_val_accuracy,
            best_val_acc: result.best_val_accuracy,
            best_step: result.best_epoch,
        },
        best_genome: result.best_genome,
    })
}

/// Runs every repeat of the configured experiment, writing `config.toml`,
/// `metrics.csv`, `runs.csv`, `timing.csv`, and one best-network checkpoint
/// per repeat into `run.out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome, ExperimentError> {
    cfg.validate()?;
    let out_dir = PathBuf::from(&cfg.run.out_dir);
    std::fs::create_dir_all(&out_dir).map_err(io_err(&out_dir))?;
    write_file(&out_dir.join("config.toml"), &cfg.to_toml_string()?)?;

    let spec = cfg.network_spec()?;
    let (train_set, val_set) = materialize_dataset(&cfg.dataset)?;

    let body = || -> Result<(Vec<MetricsRow>, Vec<RunSummary>, Vec<f64>), ExperimentError> {
        let mut all_rows = Vec::new();
        let mut summaries = Vec::new();
        let mut timings = Vec::new();
        for run in 0..cfg.run.repeats {
            let run_seed = cfg.run.seed + run as u64;
            let started = Instant::now();
            let result = match &cfg.trainer {
                TrainerSection::Ea(ea) => {
                    run_ea_once(run, run_seed, &spec, ea, &cfg.run, &train_set, &val_set)?
                }
                TrainerSection::Adam(_) | TrainerSection::Sgd(_) => {
                    run_grad_once(run, run_seed, &spec, cfg, &train_set, &val_set)?
                }
            };
            timings.push(started.elapsed().as_secs_f64());
            let best_net =
                PopulationParams::from_genome(spec.clone(), &result.best_genome)?;
            save_checkpoint(out_dir.join(format!("best_run{run}.evnc")), &best_net)?;
            all_rows.extend(result.rows);
            summaries.push(result.summary);
        }
        Ok((all_rows, summaries, timings))
    };

    let (all_rows, summaries, timings) = if cfg.run.threads > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.run.threads)
            .build()
            .map_err(|e| ExperimentError::ThreadPool(e.to_string()))?;
        pool.install(body)?
    } else {
        body()?
    };

    write_file(&out_dir.join("metrics.csv"), &metrics_csv(&all_rows))?;
    write_file(&out_dir.join("runs.csv"), &runs_csv(&summaries))?;
    let mut timing = String::from("run,seed,wall_seconds\n");
    for (run, secs) in timings.iter().enumerate() {
        let _ = writeln!(
            timing,
            "{},{},{:.3}",
            run,
            cfg.run.seed + run as u64,
            secs
        );
    }
    write_file(&out_dir.join("timing.csv"), &timing)?;

    Ok(ExperimentOutcome {
        runs: summaries,
        out_dir,
    })
}

/// Named ready-made configurations.
///
/// * `ea-default` — evolutionary trainer at its standard settings on MNIST.
/// * `ea-final` — the strongest evolutionary setting: λ = 2000, mostly
///   crossover offspring, batches of 1024.
/// * `adam-default` / `sgd-default` — gradient baselines on MNIST.
/// * `blobs-smoke` — a seconds-scale synthetic-data run for demos and
///   determinism checks.
pub fn preset(name: &str) -> Option<ExperimentConfig> {
    let mnist_network = NetworkSection {
        input_height: 28,
        input_width: 28,
        layers: vec![256, 128, 64, 10],
    };
    let mnist_dataset = DatasetSection::Mnist {
        dir: "data/mnist".into(),
        val_examples: 5000,
        split_seed: 0,
    };
    let cfg = match name {
        "ea-default" => ExperimentConfig {
            run: RunSection {
                out_dir: "runs/ea-default".into(),
                repeats: 5,
                ..RunSection::default()
            },
            network: mnist_network,
            dataset: mnist_dataset,
            trainer: TrainerSection::Ea(EaParams::default()),
        },
        "ea-final" => ExperimentConfig {
            run: RunSection {
                out_dir: "runs/ea-final".into(),
                repeats: 5,
                ..RunSection::default()
            },
            network: mnist_network,
            dataset: mnist_dataset,
            trainer: TrainerSection::Ea(EaParams {
                lambda: 2000,
                p_crossover: 0.75,
                p_mutation: 0.20,
                batch_size: 1024,
                ..EaParams::default()
            }),
        },
        "adam-default" => ExperimentConfig {
            run: RunSection {
                out_dir: "runs/adam-default".into(),
                ..RunSection::default()
            },
            network: mnist_network,
            dataset: mnist_dataset,
            trainer: TrainerSection::Adam(crate::config::AdamParams::default()),
        },
        "sgd-default" => ExperimentConfig {
            run: RunSection {
                out_dir: "runs/sgd-default".into(),
                ..RunSection::default()
            },
            network: mnist_network,
            dataset: mnist_dataset,
            trainer: TrainerSection::Sgd(crate::config::SgdParams::default()),
        },
        "blobs-smoke" => ExperimentConfig {
            run: RunSection {
                out_dir: "runs/blobs-smoke".into(),
                repeats: 2,
                val_interval: 10,
                ..RunSection::default()
            },
            network: NetworkSection {
                input_height: 8,
                input_width: 8,
                layers: vec![16, 4],
            },
            dataset: DatasetSection::Blobs {
                classes: 4,
                height: 8,
                width: 8,
                train_per_class: 100,
                val_per_class: 25,
                separation: 20.0,
                seed: 0,
            },
            trainer: TrainerSection::Ea(EaParams {
                lambda: 40,
                batch_size: 64,
                generations: 30,
                sigma: 0.01,
                ..EaParams::default()
            }),
        },
        _ => return None,
    };
    Some(cfg)
}

pub fn preset_names() -> &'static [&'static str] {
    &[
        "ea-default",
        "ea-final",
        "adam-default",
        "sgd-default",
        "blobs-smoke",
    ]
}

/// Returns a copy of the config with one evolutionary-trainer knob replaced.
/// `p_crossover` also adjusts `p_mutation` so the fractions keep summing
/// to one.
pub fn apply_axis(
    cfg: &ExperimentConfig,
    key: &str,
    value: &str,
) -> Result<ExperimentConfig, ExperimentError> {
    let mut out = cfg.clone();
    let TrainerSection::Ea(ea) = &mut out.trainer else {
        return Err(ExperimentError::Invalid(
            "sweeps require an evolutionary trainer section".into(),
        ));
    };
    let bad_num = |key: &str, value: &str| {
        ExperimentError::Invalid(format!("axis {key}: cannot parse \"{value}\" as a number"))
    };
    match key {
        "lambda" => ea.lambda = value.parse().map_err(|_| bad_num(key, value))?,
        "batch_size" => ea.batch_size = value.parse().map_err(|_| bad_num(key, value))?,
        "generations" => ea.generations = value.parse().map_err(|_| bad_num(key, value))?,
        "alpha" => ea.alpha = value.parse().map_err(|_| bad_num(key, value))?,
        "rho" => ea.rho = value.parse().map_err(|_| bad_num(key, value))?,
        "sigma" => ea.sigma = value.parse().map_err(|_| bad_num(key, value))?,
        "tau" => ea.tau = value.parse().map_err(|_| bad_num(key, value))?,
        "decay_k" => ea.decay_k = value.parse().map_err(|_| bad_num(key, value))?,
        "sigma_mode" => ea.sigma_mode = value.to_string(),
        "crossover_op" => ea.crossover_op = value.to_string(),
        "p_crossover" => {
            let p: f64 = value.parse().map_err(|_| bad_num(key, value))?;
            ea.p_crossover = p;
            ea.p_mutation = 1.0 - ea.p_elite - p;
        }
        other => {
            return Err(ExperimentError::Invalid(format!(
                "unknown sweep axis \"{other}\"; supported: lambda, batch_size, generations, \
                 alpha, rho, sigma, tau, decay_k, sigma_mode, crossover_op, p_crossover"
            )))
        }
    }
    out.validate()?;
    Ok(out)
}

#[derive(Debug)]
pub struct SweepOutcome {
    pub root: PathBuf,
    /// `(value, final validation accuracies over repeats)` per cell, in the
    /// order given.
    pub cells: Vec<(String, Vec<f64>)>,
}

// A value as it appears in file names: keep it short but unambiguous.
fn cell_dir_name(key: &str, value: &str) -> String {
    let safe: String = value
        .chars()
        .map(|c| if c.is_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect();
    format!("{key}={safe}")
}

/// Runs one experiment per axis value, each in its own subdirectory of
/// `run.out_dir`, then writes the cross-cell reports (`cells.csv`,
/// `mwu.csv`, `improvement.csv`).
pub fn run_sweep(
    base: &ExperimentConfig,
    key: &str,
    values: &[String],
) -> Result<SweepOutcome, ExperimentError> {
    if values.len() < 2 {
        return Err(ExperimentError::Invalid(
            "a sweep needs at least two axis values".into(),
        ));
    }
    let root = PathBuf::from(&base.run.out_dir);
    std::fs::create_dir_all(&root).map_err(io_err(&root))?;

    let mut cells = Vec::new();
    for value in values {
        let mut cell_cfg = apply_axis(base, key, value)?;
        let cell_dir = root.join(cell_dir_name(key, value));
        cell_cfg.run.out_dir = cell_dir.display().to_string();
        let outcome = run_experiment(&cell_cfg)?;
        cells.push((value.clone(), outcome.final_val_accs()));
    }

    write_sweep_reports(&root, key, &cells)?;
    Ok(SweepOutcome { root, cells })
}

fn write_sweep_reports(
    root: &Path,
    key: &str,
    cells: &[(String, Vec<f64>)],
) -> Result<(), ExperimentError> {
    let mut cells_csv = String::from("cell,axis,value,median,q1,q3,min,max\n");
    for (i, (value, accs)) in cells.iter().enumerate() {
        let s = summarize(accs)?;
        let _ = writeln!(
            cells_csv,
            "{},{},{},{},{},{},{},{}",
            i,
            key,
            value,
            fmt_f64(s.median),
            fmt_f64(s.q1),
            fmt_f64(s.q3),
            fmt_f64(s.min),
            fmt_f64(s.max)
        );
    }
    write_file(&root.join("cells.csv"), &cells_csv)?;

    // One-sided test per ordered pair: p for "cell a tends larger than b".
    let mut mwu_csv = String::from("first,second,u,p,method\n");
    for (i, (vi, ai)) in cells.iter().enumerate() {
        for (j, (vj, aj)) in cells.iter().enumerate() {
            if i == j {
                continue;
            }
            let line = match mann_whitney_u_one_sided(ai, aj) {
                Ok(r) => format!(
                    "{vi},{vj},{},{},{}",
                    fmt_f64(r.u),
                    fmt_f64(r.p),
                    match r.method {
                        crate::stats::MwuMethod::Exact => "exact",
                        crate::stats::MwuMethod::NormalApprox => "normal",
                    }
                ),
                Err(StatsError::Degenerate) => format!("{vi},{vj},,,degenerate"),
                Err(e) => return Err(e.into()),
            };
            mwu_csv.push_str(&line);
            mwu_csv.push('\n');
        }
    }
    write_file(&root.join("mwu.csv"), &mwu_csv)?;

    // Median improvement of every cell relative to the first.
    let mut improvement_csv = String::from("baseline,cell,relative_improvement\n");
    let (base_value, base_accs) = &cells[0];
    for (value, accs) in cells.iter().skip(1) {
        let field = match relative_improvement(base_accs, accs) {
            Ok(v) => fmt_f64(v),
            Err(_) => String::new(),
        };
        let _ = writeln!(improvement_csv, "{base_value},{value},{field}");
    }
    write_file(&root.join("improvement.csv"), &improvement_csv)?;
    Ok(())
}

/// Reads the `runs.csv` of every cell directory under a sweep root and
/// rebuilds the cross-cell reports from them. Returns the cells found.
pub fn summarize_sweep(root: impl AsRef<Path>) -> Result<SweepOutcome, ExperimentError> {
    let root = root.as_ref();
    let mut cell_dirs: Vec<(String, String, PathBuf)> = Vec::new();
    let entries = std::fs::read_dir(root).map_err(io_err(root))?;
    for entry in entries {
        let entry = entry.map_err(io_err(root))?;
        let path = entry.path();
        let name = entry.file_name().to_string_lossy().into_owned();
        if path.is_dir() && path.join("runs.csv").is_file() {
            if let Some((key, value)) = name.split_once('=') {
                cell_dirs.push((key.to_string(), value.to_string(), path));
            }
        }
    }
    if cell_dirs.is_empty() {
        return Err(ExperimentError::Invalid(format!(
            "no `axis=value` cell directories with runs.csv under {}",
            root.display()
        )));
    }
    let key = cell_dirs[0].0.clone();
    if cell_dirs.iter().any(|(k, _, _)| *k != key) {
        return Err(ExperimentError::Invalid(
            "cell directories disagree on the axis name".into(),
        ));
    }
    // Numeric-aware order so "8" sorts before "256"; fall back to lexicographic.
    cell_dirs.sort_by(|a, b| match (a.1.parse::<f64>(), b.1.parse::<f64>()) {
        (Ok(x), Ok(y)) => x.partial_cmp(&y).unwrap(),
        _ => a.1.cmp(&b.1),
    });

    let mut cells = Vec::new();
    for (_, value, dir) in &cell_dirs {
        let path = dir.join("runs.csv");
        let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
        let accs = parse_runs_csv(&text)
            .map_err(|e| ExperimentError::Invalid(format!("{}: {e}", path.display())))?;
        cells.push((value.clone(), accs));
    }
    write_sweep_reports(root, &key, &cells)?;
    Ok(SweepOutcome {
        root: root.to_path_buf(),
        cells,
    })
}

fn parse_runs_csv(text: &str) -> Result<Vec<f64>, String> {
    let mut lines = text.lines();
    let header = lines.next().ok_or("empty runs.csv")?;
    let col = header
        .split(',')
        .position(|c| c == "final_val_acc")
        .ok_or("runs.csv has no final_val_acc column")?;
    let mut accs = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let field = line
            .split(',')
            .nth(col)
            .ok_or_else(|| format!("row {} is too short", i + 1))?;
        accs.push(
            field
                .parse::<f64>()
                .map_err(|e| format!("row {}: {e}", i + 1))?,
        );
    }
    if accs.is_empty() {
        return Err("runs.csv has no data rows".into());
    }
    Ok(accs)
}
