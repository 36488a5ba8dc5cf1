//! Joint training of the two streams and agreement-ratio evaluation.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::agreement::Variant;
use crate::dataset::{AnnotationSet, Label, TieBreak};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::losses::{annotator_gammas, single_column_gamma, AgreementLoss, LossConfig};
use crate::metrics::{agreement_ratio, EvalReport};
use crate::model::{ModelConfig, TwoStreamModel};
use crate::objective::{Batch, LossBreakdown, Objective};
use crate::optim::{Adam, Monitor, Plateau};
use crate::seeds::{self, Stream};

/// How annotations reach the classifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Paradigm {
    /// Train on per-sample majority votes; no agreement stream.
    #[serde(rename = "majority_voting")]
    MajorityVoting,
    /// Average the classifier loss over every annotator; no agreement stream.
    #[serde(rename = "learn_from_all")]
    LearnFromAll,
    /// Learn-from-all on the agreement-regularized probability, jointly with
    /// the agreement stream.
    #[default]
    #[serde(rename = "learn2agree")]
    AgreementRegularized,
}

impl Paradigm {
    pub fn as_str(self) -> &'static str {
        match self {
            Paradigm::MajorityVoting => "majority_voting",
            Paradigm::LearnFromAll => "learn_from_all",
            Paradigm::AgreementRegularized => "learn2agree",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub paradigm: Paradigm,
    pub loss: LossConfig,
    pub model: ModelConfig,
    pub epochs: usize,
    pub learning_rate: f64,
    pub lr_patience: usize,
    pub lr_factor: f64,
    pub monitor: Monitor,
    pub batch_size: usize,
    pub seed: u64,
    /// Fraction of samples held out for per-epoch evaluation.
    pub eval_split: f64,
    /// Decision threshold on the evaluated probability (`p >= threshold`).
    pub threshold: f64,
    pub tie_break: TieBreak,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            paradigm: Paradigm::AgreementRegularized,
            loss: LossConfig::default(),
            model: ModelConfig::default(),
            epochs: 50,
            learning_rate: 1e-4,
            lr_patience: 10,
            lr_factor: 0.1,
            monitor: Monitor::TrainLoss,
            batch_size: 32,
            seed: 0,
            eval_split: 0.2,
            threshold: 0.5,
            tie_break: TieBreak::Negative,
        }
    }
}

impl TrainConfig {
    /// Check consistency and fill the agreement loss default (pinball for the
    /// distributional head, RMSE for the linear one).
    pub fn resolve(mut self) -> Result<Self> {
        self.loss.validate()?;
        let agreement_stream = self.paradigm == Paradigm::AgreementRegularized;
        match (agreement_stream, self.loss.agreement_loss) {
            (false, Some(_)) => {
                return Err(Error::Config(format!(
                    "agreement_loss is set but paradigm `{}` has no agreement stream",
                    self.paradigm.as_str()
                )))
            }
            (true, None) => {
                self.loss.agreement_loss = Some(match self.model.agreement_variant {
                    Variant::Distributional => AgreementLoss::Ar,
                    Variant::Linear => AgreementLoss::Rmse,
                })
            }
            _ => {}
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        if !(self.lr_factor > 0.0 && self.lr_factor <= 1.0) {
            return Err(Error::Config(format!("lr_factor must be in (0, 1], got {}", self.lr_factor)));
        }
        if self.lr_patience == 0 {
            return Err(Error::Config("lr_patience must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.eval_split) {
            return Err(Error::Config(format!("eval_split must be in [0, 1), got {}", self.eval_split)));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!("threshold must be in (0, 1), got {}", self.threshold)));
        }
        Ok(self)
    }

    /// Regularization scale actually applied by the model.
    pub fn effective_lambda(&self) -> f64 {
        if self.paradigm == Paradigm::AgreementRegularized {
            self.loss.lambda
        } else {
            0.0
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub classifier_loss: f64,
    pub agreement_loss: f64,
    pub total_loss: f64,
    /// Learning rate used during this epoch.
    pub lr: f64,
    /// Agreement ratio on the held-out split (NaN when undefined).
    pub delta: f64,
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,classifier_loss,agreement_loss,total_loss,lr,delta\n");
    for r in history {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.epoch, r.classifier_loss, r.agreement_loss, r.total_loss, r.lr, r.delta
        );
    }
    out
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: TwoStreamModel,
    pub history: Vec<EpochRecord>,
    pub train_indices: Vec<usize>,
    pub eval_indices: Vec<usize>,
    pub warnings: Vec<String>,
}

/// Seeded train/held-out split. Returns `(train, eval)` index lists, each sorted.
pub fn split_indices(n: usize, eval_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seeds::rng(seed, Stream::Split));
    let n_eval = ((n as f64) * eval_fraction).round() as usize;
    let n_eval = n_eval.min(n.saturating_sub(1));
    let mut eval: Vec<usize> = idx[..n_eval].to_vec();
    let mut train: Vec<usize> = idx[n_eval..].to_vec();
    eval.sort_unstable();
    train.sort_unstable();
    (train, eval)
}

/// Fresh model for `cfg`, initialized from the config seed.
pub fn init_model(input_dim: usize, cfg: &TrainConfig) -> Result<TwoStreamModel> {
    TwoStreamModel::new(
        input_dim,
        cfg.model.clone(),
        cfg.effective_lambda(),
        &mut seeds::rng(cfg.seed, Stream::Init),
    )
}

/// Initialize, split, and train.
pub fn fit(data: &AnnotationSet, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let cfg = cfg.clone().resolve()?;
    let model = init_model(data.dim(), &cfg)?;
    train(model, data, &cfg)
}

/// Train `model` on a seeded split of `data`, evaluating on the held-out part
/// after every epoch.
pub fn train(mut model: TwoStreamModel, data: &AnnotationSet, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let cfg = cfg.clone().resolve()?;
    if model.input_dim != data.dim() {
        return Err(Error::Shape {
            expected: model.input_dim,
            got: data.dim(),
        });
    }
    model.lambda = cfg.effective_lambda();
    let (train_idx, eval_idx) = split_indices(data.len(), cfg.eval_split, cfg.seed);
    let train_set = data.subset(&train_idx)?;
    let eval_set = if eval_idx.is_empty() {
        None
    } else {
        Some(data.subset(&eval_idx)?)
    };

    let mut warnings = Vec::new();
    let alpha = train_set.agreement_targets();
    let votes: Vec<[Label; 1]>;
    let (rows, gammas): (Vec<&[Label]>, Vec<f64>) = match cfg.paradigm {
        Paradigm::MajorityVoting => {
            let mv = train_set.majority_vote(cfg.tie_break);
            let gamma = single_column_gamma(&mv, cfg.loss.gamma_policy);
            votes = mv.iter().map(|&v| [Some(v)]).collect();
            (votes.iter().map(|r| r.as_slice()).collect(), vec![gamma])
        }
        _ => {
            let (g, w) = annotator_gammas(&train_set, cfg.loss.gamma_policy);
            warnings.extend(w);
            ((0..train_set.len()).map(|i| train_set.row(i)).collect(), g)
        }
    };
    let regularized = cfg.paradigm == Paradigm::AgreementRegularized;
    let objective = Objective {
        classifier: cfg.loss.classifier_loss,
        gammas,
        agreement: if regularized { cfg.loss.agreement_loss } else { None },
        stream_weight: cfg.loss.stream_weight,
        use_regularized: regularized,
        supervise_indicator: model.config.supervise_indicator,
    };

    let mut adam = Adam::new(cfg.learning_rate);
    let mut plateau = Plateau::new(cfg.lr_patience, cfg.lr_factor, cfg.monitor);
    let mut shuffle_rng = seeds::rng(cfg.seed, Stream::Shuffle);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut skipped = 0usize;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut sums = LossBreakdown::default();
        let mut n_batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = Batch {
                features: chunk.iter().map(|&i| train_set.features(i)).collect(),
                labels: chunk.iter().map(|&i| rows[i]).collect(),
                alpha: chunk.iter().map(|&i| alpha.values()[i]).collect(),
            };
            let out = model.forward(&batch.features)?;
            let (parts, upstream) = objective.compute(&out, &batch)?;
            if !parts.classifier_active {
                skipped += 1;
            }
            let grads = model.backward(&out.cache, &upstream)?;
            adam.update(&mut model, &grads);
            sums.classifier += parts.classifier;
            sums.agreement += parts.agreement;
            sums.total += parts.total;
            n_batches += 1;
        }
        let nb = n_batches as f64;
        let delta = match &eval_set {
            Some(e) => evaluate(&model, e, cfg.threshold, regularized, Exec::Sequential)
                .map(|r| r.delta)
                .unwrap_or(f64::NAN),
            None => f64::NAN,
        };
        let record = EpochRecord {
            epoch,
            classifier_loss: sums.classifier / nb,
            agreement_loss: sums.agreement / nb,
            total_loss: sums.total / nb,
            lr: adam.lr,
            delta,
        };
        let watched = match cfg.monitor {
            Monitor::TrainLoss => record.total_loss,
            Monitor::ValDelta => record.delta,
        };
        adam.lr = plateau.step(watched, adam.lr);
        history.push(record);
    }
    if skipped > 0 {
        warnings.push(format!("{skipped} batches had no usable annotator for the classifier loss"));
    }
    Ok(TrainOutcome {
        model,
        history,
        train_indices: train_idx,
        eval_indices: eval_idx,
        warnings,
    })
}

/// Hard predictions `p >= threshold`, where `p` is the regularized or raw
/// classifier probability.
pub fn predict_labels(
    model: &TwoStreamModel,
    data: &AnnotationSet,
    threshold: f64,
    use_regularized: bool,
    exec: Exec,
) -> Result<Vec<bool>> {
    let inputs: Vec<&[f64]> = (0..data.len()).map(|i| data.features(i)).collect();
    Ok(model
        .predict(&inputs, exec)?
        .into_iter()
        .map(|p| (if use_regularized { p.p_tilde } else { p.p_hat }) >= threshold)
        .collect())
}

pub fn evaluate(
    model: &TwoStreamModel,
    data: &AnnotationSet,
    threshold: f64,
    use_regularized: bool,
    exec: Exec,
) -> Result<EvalReport> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::invalid("threshold", format!("{threshold} outside (0, 1)")));
    }
    agreement_ratio(&predict_labels(model, data, threshold, use_regularized, exec)?, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_consistency() {
        let cfg = TrainConfig {
            paradigm: Paradigm::MajorityVoting,
            loss: LossConfig {
                agreement_loss: Some(AgreementLoss::Ar),
                ..LossConfig::default()
            },
            ..TrainConfig::default()
        };
        assert!(matches!(cfg.resolve(), Err(Error::Config(_))));
        let r = TrainConfig::default().resolve().unwrap();
        assert_eq!(r.loss.agreement_loss, Some(AgreementLoss::Ar));
        let mut lin = TrainConfig::default();
        lin.model.agreement_variant = Variant::Linear;
        assert_eq!(lin.resolve().unwrap().loss.agreement_loss, Some(AgreementLoss::Rmse));
        let bad = TrainConfig {
            eval_split: 1.0,
            ..TrainConfig::default()
        };
        assert!(bad.resolve().is_err());
    }

    #[test]
    fn defaults_mirror_reference_settings() {
        let c = TrainConfig::default();
        assert_eq!((c.epochs, c.lr_patience, c.batch_size), (50, 10, 32));
        assert_eq!((c.learning_rate, c.lr_factor), (1e-4, 0.1));
        assert_eq!(c.loss.lambda, 3.0);
        assert_eq!(c.model.bins, 10);
    }

    #[test]
    fn paradigm_names() {
        for p in [Paradigm::MajorityVoting, Paradigm::LearnFromAll, Paradigm::AgreementRegularized] {
            let s = serde_json::to_string(&p).unwrap();
            assert_eq!(s, format!("\"{}\"", p.as_str()));
        }
    }

    #[test]
    fn split_is_seeded_partition() {
        let (a, b) = split_indices(100, 0.2, 3);
        assert_eq!(b.len(), 20);
        let mut all: Vec<usize> = a.iter().chain(&b).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_eq!(split_indices(100, 0.2, 3), (a.clone(), b.clone()));
        assert_ne!(split_indices(100, 0.2, 4).1, b);
    }
}
