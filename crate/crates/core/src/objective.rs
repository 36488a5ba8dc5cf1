//! Joint training objective: classifier loss over every present annotation
//! plus the weighted agreement-regression loss.

use crate::dataset::Label;
use crate::error::Result;
use crate::losses::{agreement_loss, try_multi_annotator_loss, AgreementLoss, ClassifierLoss, Inner};
use crate::model::{ForwardOutput, LossGrads};

/// A mini-batch: features, per-sample annotation rows, agreement targets.
#[derive(Clone, Debug)]
pub struct Batch<'a> {
    pub features: Vec<&'a [f64]>,
    pub labels: Vec<&'a [Label]>,
    pub alpha: Vec<f64>,
}

impl Batch<'_> {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Objective {
    pub classifier: ClassifierLoss,
    /// Focusing parameter per label column (focal loss only).
    pub gammas: Vec<f64>,
    /// `None` disables the agreement stream.
    pub agreement: Option<AgreementLoss>,
    pub stream_weight: f64,
    /// Feed the regularized probability (rather than the raw one) to the
    /// classifier loss.
    pub use_regularized: bool,
    pub supervise_indicator: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub classifier: f64,
    pub agreement: f64,
    pub total: f64,
    /// False when no annotator in the batch could contribute a classifier term.
    pub classifier_active: bool,
}

impl Objective {
    pub fn compute(&self, out: &ForwardOutput, batch: &Batch<'_>) -> Result<(LossBreakdown, LossGrads)> {
        let n = batch.len();
        let mut grads = LossGrads::zeros(n);
        let mut parts = LossBreakdown::default();
        let probs = if self.use_regularized { &out.p_tilde } else { &out.p_hat };
        let inner = match self.classifier {
            ClassifierLoss::FocalCe => Inner::Focal(&self.gammas),
            ClassifierLoss::Wkl => Inner::Wkl,
        };
        if let Some(m) = try_multi_annotator_loss(probs, &batch.labels, inner)? {
            parts.classifier = m.value;
            parts.classifier_active = true;
            if self.use_regularized {
                grads.p_tilde = m.grad;
            } else {
                grads.p_hat = m.grad;
            }
        }
        if let Some(kind) = self.agreement {
            let mu = self.stream_weight;
            let (v, g) = agreement_loss(kind, &out.y_hat, &batch.alpha)?;
            parts.agreement = v;
            grads.y_hat = g.into_iter().map(|x| mu * x).collect();
            if self.supervise_indicator {
                let (v, g) = agreement_loss(kind, &out.y_tilde, &batch.alpha)?;
                parts.agreement += v;
                grads.y_tilde = g.into_iter().map(|x| mu * x).collect();
            }
        }
        parts.total = parts.classifier + self.stream_weight * parts.agreement;
        Ok((parts, grads))
    }
}
