//! Experiment configuration and the runners behind each CLI command.
//!
//! Configuration is a JSON document; every run echoes the fully resolved
//! configuration (defaults included) into its outputs. Runs are deterministic
//! given the seed, so re-running a command rewrites identical bytes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agreement::Variant;
use crate::dataset::{AnnotationSet, Format, Label};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::losses::{AgreementLoss, ClassifierLoss};
use crate::metrics::{annotator_vs_rest, EvalReport};
use crate::model::{grad_check, GradCheckReport, ModelConfig, TwoStreamModel};
use crate::objective::{Batch, Objective};
use crate::seeds::{self, Stream};
use crate::synth::{generate, SynthSpec};
use crate::trainer::{evaluate, fit, history_csv, EpochRecord, Paradigm, TrainConfig};
use crate::util::{mean, std_dev};

/// Ablation axes for `matrix`. Absent axes keep the base configuration's value.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axes {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paradigm: Option<Vec<Paradigm>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classifier_loss: Option<Vec<ClassifierLoss>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agreement_variant: Option<Vec<Variant>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agreement_loss: Option<Vec<AgreementLoss>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<Vec<u64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_format: Option<Format>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthSpec>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub repeat_seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axes: Option<Axes>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Validate the data source and training settings; fills defaults.
    pub fn resolve(mut self) -> Result<Self> {
        match (&self.dataset, &self.synth) {
            (Some(_), Some(_)) => return Err(Error::Config("give either `dataset` or `synth`, not both".into())),
            (None, None) => return Err(Error::Config("one of `dataset` or `synth` is required".into())),
            (None, Some(s)) => s.validate()?,
            _ => {}
        }
        self.train = self.train.resolve()?;
        Ok(self)
    }

    /// Data for a run with the given seed. Inline synthetic specs without an
    /// explicit seed take the run seed.
    pub fn load_data(&self, run_seed: u64) -> Result<AnnotationSet> {
        if let Some(path) = &self.dataset {
            let format = self.dataset_format.unwrap_or_else(|| Format::from_path(path));
            return AnnotationSet::load(path, format);
        }
        let mut spec = self
            .synth
            .clone()
            .ok_or_else(|| Error::Config("no data source".into()))?;
        spec.seed = Some(spec.seed.unwrap_or(run_seed));
        Ok(generate(&spec)?.data)
    }

    /// Resolved configuration as written into outputs. The output location
    /// is left out so that runs written to different directories compare equal.
    pub fn echo(&self) -> serde_json::Value {
        let cfg = ExperimentConfig {
            out: None,
            ..self.clone()
        };
        serde_json::to_value(cfg).expect("config serializes")
    }
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

/// Everything a `train` run produces.
#[derive(Clone, Debug)]
pub struct TrainRun {
    pub model: TwoStreamModel,
    pub history: Vec<EpochRecord>,
    pub report: EvalReport,
    pub warnings: Vec<String>,
    pub n_train: usize,
    pub n_eval: usize,
}

#[derive(Serialize)]
struct TrainReportDoc<'a> {
    config: serde_json::Value,
    seed: u64,
    paradigm: &'a str,
    n_train: usize,
    n_eval: usize,
    report: &'a EvalReport,
    final_epoch: Option<&'a EpochRecord>,
    warnings: &'a [String],
}

/// Train and evaluate one configuration on already-loaded data. The report
/// is computed on the held-out split (or on all data when nothing is held out).
pub fn train_on(data: &AnnotationSet, cfg: &TrainConfig) -> Result<TrainRun> {
    let outcome = fit(data, cfg)?;
    let regularized = cfg.paradigm == Paradigm::AgreementRegularized;
    let eval_data = if outcome.eval_indices.is_empty() {
        data.clone()
    } else {
        data.subset(&outcome.eval_indices)?
    };
    let report = evaluate(&outcome.model, &eval_data, cfg.threshold, regularized, Exec::Sequential)?;
    Ok(TrainRun {
        n_train: outcome.train_indices.len(),
        n_eval: outcome.eval_indices.len(),
        model: outcome.model,
        history: outcome.history,
        report,
        warnings: outcome.warnings,
    })
}

/// `train`: writes `checkpoint.json`, `history.csv`, and `report.json` into `out`.
pub fn run_train(cfg: &ExperimentConfig, out: &Path) -> Result<TrainRun> {
    let cfg = cfg.clone().resolve()?;
    let data = cfg.load_data(cfg.train.seed)?;
    let run = train_on(&data, &cfg.train)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let echo = cfg.echo();
    run.model.to_checkpoint(echo.clone()).save(out.join("checkpoint.json"))?;
    write_file(&out.join("history.csv"), &history_csv(&run.history))?;
    let doc = TrainReportDoc {
        config: echo,
        seed: cfg.train.seed,
        paradigm: cfg.train.paradigm.as_str(),
        n_train: run.n_train,
        n_eval: run.n_eval,
        report: &run.report,
        final_epoch: run.history.last(),
        warnings: &run.warnings,
    };
    write_file(&out.join("report.json"), &(serde_json::to_string_pretty(&doc)? + "\n"))?;
    Ok(run)
}

/// `evaluate`: score a checkpoint on a dataset (all samples).
pub fn run_evaluate(
    checkpoint: &Path,
    data: &AnnotationSet,
    threshold: f64,
    use_regularized: bool,
) -> Result<EvalReport> {
    let ck = crate::model::Checkpoint::load(checkpoint)?;
    let model = TwoStreamModel::from_checkpoint(&ck)?;
    evaluate(&model, data, threshold, use_regularized, Exec::Parallel)
}

/// One matrix cell: a fully specified variant of the base configuration.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct Cell {
    pub paradigm: String,
    pub classifier_loss: String,
    pub agreement_variant: String,
    pub agreement_loss: String,
}

impl Cell {
    pub fn key(&self) -> String {
        format!(
            "{}/{}/{}/{}",
            self.paradigm, self.classifier_loss, self.agreement_variant, self.agreement_loss
        )
    }
}

fn name<T: Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        Ok(other) => other.to_string(),
        Err(_) => String::new(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MatrixRow {
    #[serde(flatten)]
    pub cell: Cell,
    pub seed: u64,
    pub delta: f64,
    pub classifier_loss_final: f64,
    pub agreement_loss_final: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MatrixSummary {
    #[serde(flatten)]
    pub cell: Cell,
    pub n: usize,
    pub mean_delta: f64,
    pub std_delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MatrixResult {
    pub rows: Vec<MatrixRow>,
    pub summary: Vec<MatrixSummary>,
}

/// Expand the axes into distinct cells. Paradigms without an agreement
/// stream ignore the agreement axes, so their duplicates collapse.
pub fn expand_cells(base: &TrainConfig, axes: &Axes) -> Result<Vec<(Cell, TrainConfig)>> {
    fn axis<T: Clone>(v: &Option<Vec<T>>, base: T, label: &str) -> Result<Vec<T>> {
        match v {
            Some(xs) if xs.is_empty() => Err(Error::Config(format!("axis `{label}` is empty"))),
            Some(xs) => Ok(xs.clone()),
            None => Ok(vec![base]),
        }
    }
    let base_agreement = base.loss.agreement_loss;
    let paradigms = axis(&axes.paradigm, base.paradigm, "paradigm")?;
    let classifiers = axis(&axes.classifier_loss, base.loss.classifier_loss, "classifier_loss")?;
    let variants = axis(&axes.agreement_variant, base.model.agreement_variant, "agreement_variant")?;
    let agreement: Vec<Option<AgreementLoss>> = match &axes.agreement_loss {
        Some(xs) if xs.is_empty() => return Err(Error::Config("axis `agreement_loss` is empty".into())),
        Some(xs) => xs.iter().copied().map(Some).collect(),
        None => vec![base_agreement],
    };
    let mut cells: BTreeMap<Cell, TrainConfig> = BTreeMap::new();
    for &p in &paradigms {
        for &c in &classifiers {
            for &v in &variants {
                for &a in &agreement {
                    let mut cfg = base.clone();
                    cfg.paradigm = p;
                    cfg.loss.classifier_loss = c;
                    let stream = p == Paradigm::AgreementRegularized;
                    cfg.model.agreement_variant = v;
                    cfg.loss.agreement_loss = if stream { a } else { None };
                    let cfg = cfg.resolve()?;
                    let cell = Cell {
                        paradigm: p.as_str().to_string(),
                        classifier_loss: name(&c),
                        agreement_variant: if stream { name(&v) } else { "-".into() },
                        agreement_loss: cfg.loss.agreement_loss.map(|a| name(&a)).unwrap_or_else(|| "-".into()),
                    };
                    cells.entry(cell).or_insert(cfg);
                }
            }
        }
    }
    Ok(cells.into_iter().collect())
}

/// Seeds for repeated runs: the `seed` axis, else `repeat_seeds`, else the
/// base seed.
pub fn run_seeds(cfg: &ExperimentConfig) -> Result<Vec<u64>> {
    if let Some(axes) = &cfg.axes {
        if let Some(s) = &axes.seed {
            if s.is_empty() {
                return Err(Error::Config("axis `seed` is empty".into()));
            }
            return Ok(s.clone());
        }
    }
    if cfg.repeat_seeds.is_empty() {
        Ok(vec![cfg.train.seed])
    } else {
        Ok(cfg.repeat_seeds.clone())
    }
}

/// `matrix`: every cell × seed, run independently (in parallel when enabled).
pub fn run_matrix(cfg: &ExperimentConfig, exec: Exec) -> Result<MatrixResult> {
    let cfg = cfg.clone().resolve()?;
    let axes = cfg.axes.clone().unwrap_or_default();
    let cells = expand_cells(&cfg.train, &axes)?;
    let seeds = run_seeds(&cfg)?;
    let data: Vec<AnnotationSet> = exec.try_map(&seeds, |&s| cfg.load_data(s))?;
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..seeds.len()).map(move |s| (c, s)))
        .collect();
    let rows = exec.try_map(&jobs, |&(c, s)| -> Result<MatrixRow> {
        let (cell, base) = &cells[c];
        let train = TrainConfig {
            seed: seeds[s],
            ..base.clone()
        };
        let run = train_on(&data[s], &train)?;
        let last = run.history.last();
        Ok(MatrixRow {
            cell: cell.clone(),
            seed: seeds[s],
            delta: run.report.delta,
            classifier_loss_final: last.map_or(f64::NAN, |r| r.classifier_loss),
            agreement_loss_final: last.map_or(f64::NAN, |r| r.agreement_loss),
        })
    })?;
    let summary = cells
        .iter()
        .map(|(cell, _)| {
            let deltas: Vec<f64> = rows.iter().filter(|r| &r.cell == cell).map(|r| r.delta).collect();
            MatrixSummary {
                cell: cell.clone(),
                n: deltas.len(),
                mean_delta: mean(&deltas),
                std_delta: std_dev(&deltas),
            }
        })
        .collect();
    Ok(MatrixResult { rows, summary })
}

impl MatrixResult {
    pub fn rows_csv(&self) -> String {
        let mut out = String::from(
            "paradigm,classifier_loss,agreement_variant,agreement_loss,seed,delta,classifier_loss_final,agreement_loss_final\n",
        );
        for r in &self.rows {
            let c = &r.cell;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                c.paradigm,
                c.classifier_loss,
                c.agreement_variant,
                c.agreement_loss,
                r.seed,
                r.delta,
                r.classifier_loss_final,
                r.agreement_loss_final
            );
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from("paradigm,classifier_loss,agreement_variant,agreement_loss,n,mean_delta,std_delta\n");
        for s in &self.summary {
            let c = &s.cell;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                c.paradigm, c.classifier_loss, c.agreement_variant, c.agreement_loss, s.n, s.mean_delta, s.std_delta
            );
        }
        out
    }

    /// Delta per seed for one cell, in seed order.
    pub fn deltas(&self, cell_key: &str) -> Vec<(u64, f64)> {
        self.rows
            .iter()
            .filter(|r| r.cell.key() == cell_key)
            .map(|r| (r.seed, r.delta))
            .collect()
    }

    pub fn write(&self, cfg: &ExperimentConfig, out: &Path) -> Result<()> {
        write_file(&out.join("matrix.csv"), &self.rows_csv())?;
        write_file(&out.join("matrix_summary.csv"), &self.summary_csv())?;
        let doc = serde_json::json!({
            "config": cfg.echo(),
            "rows": self.rows,
            "summary": self.summary,
        });
        write_file(&out.join("matrix.json"), &(serde_json::to_string_pretty(&doc)? + "\n"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BaselineRow {
    pub annotator: String,
    pub delta: f64,
    pub report: EvalReport,
}

/// `annotator-baseline`: each annotator scored against the others.
pub fn annotator_baseline(data: &AnnotationSet) -> Result<Vec<BaselineRow>> {
    if data.n_annotators() < 3 {
        return Err(Error::Config(format!(
            "annotator baseline needs >= 3 annotators (got {}): with one annotator left \
             there is no annotator pair to form the denominator",
            data.n_annotators()
        )));
    }
    (0..data.n_annotators())
        .map(|j| {
            let report = annotator_vs_rest(data, j)?;
            Ok(BaselineRow {
                annotator: data.annotator_ids()[j].clone(),
                delta: report.delta,
                report,
            })
        })
        .collect()
}

/// Small model and random batch used by `grad-check`.
pub struct GradCheckSetup {
    pub model: TwoStreamModel,
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<Vec<Label>>,
    pub alpha: Vec<f64>,
    pub objective: Objective,
}

pub const GRAD_CHECK_BATCH: usize = 8;

/// Build a toy problem (3 inputs, one hidden layer of 5, 3 annotators) whose
/// losses and heads follow `cfg`.
pub fn grad_check_setup(cfg: &TrainConfig, seed: u64) -> Result<GradCheckSetup> {
    let cfg = cfg.clone().resolve()?;
    let model_cfg = ModelConfig {
        hidden: vec![5],
        bins: cfg.model.bins.min(5),
        indicator_hidden: 3,
        ..cfg.model.clone()
    };
    let lambda = if cfg.paradigm == Paradigm::AgreementRegularized { cfg.loss.lambda } else { 0.0 };
    let model = TwoStreamModel::new(3, model_cfg, lambda, &mut seeds::rng(seed, Stream::Init))?;
    let mut rng = seeds::rng(seed, Stream::Data);
    let n_ann = 3;
    let features: Vec<Vec<f64>> = (0..GRAD_CHECK_BATCH)
        .map(|_| (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect())
        .collect();
    let labels: Vec<Vec<Label>> = (0..GRAD_CHECK_BATCH)
        .map(|i| {
            (0..n_ann)
                .map(|j| {
                    if j == 0 {
                        Some(i % 2 == 0)
                    } else if rng.gen_bool(0.25) {
                        None
                    } else {
                        Some(rng.gen_bool(0.5))
                    }
                })
                .collect()
        })
        .collect();
    let alpha = labels
        .iter()
        .map(|r: &Vec<Label>| {
            let present: Vec<bool> = r.iter().flatten().copied().collect();
            present.iter().filter(|&&x| x).count() as f64 / present.len() as f64
        })
        .collect();
    let regularized = cfg.paradigm == Paradigm::AgreementRegularized;
    let objective = Objective {
        classifier: cfg.loss.classifier_loss,
        gammas: (0..n_ann).map(|j| 0.5 + j as f64).collect(),
        agreement: if regularized { cfg.loss.agreement_loss } else { None },
        stream_weight: cfg.loss.stream_weight,
        use_regularized: regularized,
        supervise_indicator: cfg.model.supervise_indicator,
    };
    Ok(GradCheckSetup {
        model,
        features,
        labels,
        alpha,
        objective,
    })
}

impl GradCheckSetup {
    pub fn batch(&self) -> Batch<'_> {
        Batch {
            features: self.features.iter().map(Vec::as_slice).collect(),
            labels: self.labels.iter().map(Vec::as_slice).collect(),
            alpha: self.alpha.clone(),
        }
    }

    pub fn run(&self, tolerance: f64) -> Result<GradCheckReport> {
        grad_check(&self.model, &self.batch(), &self.objective, tolerance)
    }
}

/// Default tolerance: looser for the batch-level kappa loss.
pub fn default_grad_tolerance(loss: ClassifierLoss) -> f64 {
    match loss {
        ClassifierLoss::FocalCe => 1e-4,
        ClassifierLoss::Wkl => 1e-3,
    }
}
