//! `coagree` command-line entry point.
//!
//! Exit codes: 0 success, 2 configuration/input error, 3 runtime error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};

use coagree::dataset::{AnnotationSet, Format};
use coagree::exec::Exec;
use coagree::experiment::{self, ExperimentConfig};
use coagree::synth::{generate, SynthSpec};
use coagree::trainer::TrainConfig;

#[derive(Parser, Debug)]
#[command(name = "coagree", version, about = "Agreement-regularized classification from multiple annotators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// JSON configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed; overrides the value in the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the value in the config file.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Only print errors.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic multi-annotator dataset from a spec file.
    Synth {
        /// File name stem for the written files.
        #[arg(long, default_value = "data")]
        stem: String,
        #[command(flatten)]
        common: Common,
    },
    /// Train one configuration; writes checkpoint.json, history.csv, report.json.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Score a checkpoint against a dataset.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset to evaluate on (defaults to the data source in --config).
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        threshold: Option<f64>,
        /// Threshold the unregularized classifier output instead.
        #[arg(long)]
        raw: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Run every cell of the ablation grid over all seeds.
    Matrix {
        /// Run cells one at a time.
        #[arg(long)]
        sequential: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Score each annotator against the remaining ones.
    AnnotatorBaseline {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Finite-difference check of all analytic gradients on a toy model.
    GradCheck {
        #[arg(long)]
        tolerance: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// Config errors anywhere in the chain map to 2, everything else to 3.
fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(err) = cause.downcast_ref::<coagree::Error>() {
            return if err.is_config() { 2 } else { 3 };
        }
        if cause.downcast_ref::<UsageError>().is_some() {
            return 2;
        }
    }
    3
}

#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(UsageError(msg.into()))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Synth { stem, common } => cmd_synth(&common, &stem),
        Command::Train { common } => cmd_train(&common),
        Command::Evaluate {
            checkpoint,
            dataset,
            threshold,
            raw,
            common,
        } => cmd_evaluate(&common, &checkpoint, dataset, threshold, raw),
        Command::Matrix { sequential, common } => cmd_matrix(&common, sequential),
        Command::AnnotatorBaseline { dataset, common } => cmd_baseline(&common, dataset),
        Command::GradCheck { tolerance, common } => cmd_grad_check(&common, tolerance),
    }
}

fn say(common: &Common, msg: impl AsRef<str>) {
    if !common.quiet {
        println!("{}", msg.as_ref());
    }
}

fn warn(common: &Common, warnings: &[String]) {
    if !common.quiet {
        for w in warnings {
            eprintln!("warning: {w}");
        }
    }
}

fn require_config(common: &Common) -> anyhow::Result<&Path> {
    common.config.as_deref().ok_or_else(|| usage("--config <path> is required"))
}

/// Load an experiment config, apply flag overrides, and make a relative
/// dataset path relative to the config file.
fn load_experiment(common: &Common) -> anyhow::Result<ExperimentConfig> {
    let path = require_config(common)?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(ds) = &cfg.dataset {
        if ds.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.dataset = Some(dir.join(ds));
            }
        }
    }
    if let Some(seed) = common.seed {
        cfg.train.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out = Some(out.clone());
    }
    Ok(cfg.resolve()?)
}

fn out_dir(cfg_out: Option<&Path>) -> PathBuf {
    cfg_out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("out"))
}

fn cmd_synth(common: &Common, stem: &str) -> anyhow::Result<()> {
    let path = require_config(common)?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| coagree::Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    let mut spec: SynthSpec =
        serde_json::from_str(&text).map_err(|e| coagree::Error::Config(format!("{}: {e}", path.display())))?;
    if let Some(seed) = common.seed {
        spec.seed = Some(seed);
    }
    spec.require_seed()?;
    spec.validate()?;
    let out = generate(&spec)?;
    let dir = out_dir(common.out.as_deref());
    let written = out.write(&spec, &dir, stem)?;
    say(
        common,
        format!(
            "wrote {} ({} samples, {} annotators); realized kappa {:?}",
            written.display(),
            out.data.len(),
            out.data.n_annotators(),
            out.realized_kappa
        ),
    );
    Ok(())
}

fn cmd_train(common: &Common) -> anyhow::Result<()> {
    let cfg = load_experiment(common)?;
    let dir = out_dir(cfg.out.as_deref());
    let run = experiment::run_train(&cfg, &dir)?;
    warn(common, &run.warnings);
    say(
        common,
        format!(
            "paradigm {} seed {}: delta {:.4} on {} held-out samples; outputs in {}",
            cfg.train.paradigm.as_str(),
            cfg.train.seed,
            run.report.delta,
            run.report.n_eval,
            dir.display()
        ),
    );
    Ok(())
}

fn load_dataset(path: &Path) -> anyhow::Result<AnnotationSet> {
    Ok(AnnotationSet::load(path, Format::from_path(path))?)
}

fn cmd_evaluate(
    common: &Common,
    checkpoint: &Path,
    dataset: Option<PathBuf>,
    threshold: Option<f64>,
    raw: bool,
) -> anyhow::Result<()> {
    let (data, cfg_threshold) = match (&dataset, &common.config) {
        (Some(p), _) => (load_dataset(p)?, None),
        (None, Some(_)) => {
            let cfg = load_experiment(common)?;
            (cfg.load_data(cfg.train.seed)?, Some(cfg.train.threshold))
        }
        (None, None) => return Err(usage("give --dataset or --config")),
    };
    let threshold = threshold.or(cfg_threshold).unwrap_or(TrainConfig::default().threshold);
    if !(0.0..=1.0).contains(&threshold) {
        return Err(usage(format!("--threshold must be in [0, 1], got {threshold}")));
    }
    let report = experiment::run_evaluate(checkpoint, &data, threshold, !raw)
        .with_context(|| format!("evaluating {}", checkpoint.display()))?;
    let body = serde_json::to_string_pretty(&report)? + "\n";
    if let Some(dir) = &common.out {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join("eval_report.json");
        std::fs::write(&path, &body).with_context(|| format!("writing {}", path.display()))?;
    }
    if !common.quiet {
        print!("{body}");
    }
    Ok(())
}

fn cmd_matrix(common: &Common, sequential: bool) -> anyhow::Result<()> {
    let cfg = load_experiment(common)?;
    let exec = if sequential { Exec::Sequential } else { Exec::Parallel };
    let result = experiment::run_matrix(&cfg, exec)?;
    let dir = out_dir(cfg.out.as_deref());
    result.write(&cfg, &dir)?;
    if !common.quiet {
        print!("{}", result.summary_csv());
    }
    Ok(())
}

fn cmd_baseline(common: &Common, dataset: Option<PathBuf>) -> anyhow::Result<()> {
    let data = match (&dataset, &common.config) {
        (Some(p), _) => load_dataset(p)?,
        (None, Some(_)) => {
            let cfg = load_experiment(common)?;
            cfg.load_data(cfg.train.seed)?
        }
        (None, None) => return Err(usage("give --dataset or --config")),
    };
    let rows = experiment::annotator_baseline(&data)?;
    let body = serde_json::to_string_pretty(&rows)? + "\n";
    if let Some(dir) = &common.out {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join("annotator_baseline.json");
        std::fs::write(&path, &body).with_context(|| format!("writing {}", path.display()))?;
    }
    for r in &rows {
        say(common, format!("{}\t{:.4}", r.annotator, r.delta));
    }
    Ok(())
}

fn cmd_grad_check(common: &Common, tolerance: Option<f64>) -> anyhow::Result<()> {
    let train = match &common.config {
        Some(_) => load_experiment_train(common)?,
        None => TrainConfig::default(),
    };
    let seed = common.seed.unwrap_or(train.seed);
    let tol = tolerance.unwrap_or_else(|| experiment::default_grad_tolerance(train.loss.classifier_loss));
    let setup = experiment::grad_check_setup(&train, seed)?;
    let report = setup.run(tol)?;
    for b in &report.blocks {
        say(
            common,
            format!("{:<32} {:>5} params  max rel err {:.3e}", b.name, b.n_params, b.max_rel_error),
        );
    }
    if let Some(dir) = &common.out {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join("grad_check.json");
        std::fs::write(&path, serde_json::to_string_pretty(&report)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
    }
    if report.passed {
        say(common, format!("ok: worst {:.3e} <= {tol:e}", report.worst()));
        Ok(())
    } else {
        Err(anyhow!(
            "gradient check failed (tolerance {tol:e}): {}",
            report.failing().join(", ")
        ))
    }
}

/// grad-check only needs the training section; the data source is optional.
fn load_experiment_train(common: &Common) -> anyhow::Result<TrainConfig> {
    let path = require_config(common)?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| coagree::Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| coagree::Error::Config(format!("{}: {e}", path.display())))?;
    let train = match value.get("train") {
        Some(t) => serde_json::from_value(t.clone()),
        None => serde_json::from_value(value),
    }
    .map_err(|e| coagree::Error::Config(format!("{}: {e}", path.display())))?;
    Ok(train)
}
