//! Training losses with analytic gradients with respect to their probability
//! inputs.
//!
//! Classifier stream: focal loss averaged per annotator over present labels,
//! or a soft weighted-kappa loss computed per annotator over the batch.
//! Agreement stream: an agreement-quantile (pinball) loss or RMSE.

use serde::{Deserialize, Serialize};

use crate::dataset::{AnnotationSet, Label};
use crate::error::{Error, Result};
use crate::util::{clamp_prob, sigmoid};

/// Upper clamp on kappa inside `log(1 - kappa)`.
pub const KAPPA_EPS: f64 = 1e-7;

/// Focusing parameter used when effective numbers are undefined (annotator
/// saw only one class).
pub const FALLBACK_GAMMA: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierLoss {
    #[default]
    FocalCe,
    Wkl,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgreementLoss {
    Ar,
    Rmse,
}

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaPolicy {
    #[default]
    AutoEffectiveNumber,
    Fixed(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub classifier_loss: ClassifierLoss,
    /// Only meaningful (and only allowed) when the agreement stream trains.
    pub agreement_loss: Option<AgreementLoss>,
    pub gamma_policy: GammaPolicy,
    /// Weight of the agreement loss in the joint objective.
    pub stream_weight: f64,
    /// Scale of the agreement regularization on the classifier logit.
    pub lambda: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            classifier_loss: ClassifierLoss::FocalCe,
            agreement_loss: None,
            gamma_policy: GammaPolicy::AutoEffectiveNumber,
            stream_weight: 1.0,
            lambda: 3.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if let GammaPolicy::Fixed(g) = self.gamma_policy {
            if !(g.is_finite() && g >= 0.0) {
                return Err(Error::Config(format!("gamma must be finite and >= 0, got {g}")));
            }
        }
        for (name, v) in [("stream_weight", self.stream_weight), ("lambda", self.lambda)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

fn check_unit(name: &'static str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::invalid(name, format!("{v} outside [0, 1]")))
    }
}

/// Pinball loss whose quantile is the sample's own agreement target.
/// Returns `(value, d value / d y_hat)`; the subgradient at the kink is 0.
pub fn ar_loss(y_hat: f64, alpha: f64) -> Result<(f64, f64)> {
    check_unit("y_hat", y_hat)?;
    check_unit("alpha", alpha)?;
    let u = y_hat - alpha;
    let value = (alpha * u).max((alpha - 1.0) * u);
    let grad = if u > 0.0 {
        alpha
    } else if u < 0.0 {
        alpha - 1.0
    } else {
        0.0
    };
    Ok((value, grad))
}

/// Batch mean of [`ar_loss`].
pub fn ar_loss_mean(y_hat: &[f64], alpha: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_lengths(y_hat, alpha)?;
    let b = y_hat.len() as f64;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(y_hat.len());
    for (&y, &a) in y_hat.iter().zip(alpha) {
        let (v, g) = ar_loss(y, a)?;
        total += v;
        grad.push(g / b);
    }
    Ok((total / b, grad))
}

fn check_lengths(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Shape {
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::invalid("batch", "empty"));
    }
    Ok(())
}

pub fn rmse_loss(y_hat: &[f64], alpha: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_lengths(y_hat, alpha)?;
    let b = y_hat.len() as f64;
    let mse = y_hat.iter().zip(alpha).map(|(y, a)| (y - a).powi(2)).sum::<f64>() / b;
    let value = mse.sqrt();
    let grad = if value == 0.0 {
        vec![0.0; y_hat.len()]
    } else {
        y_hat.iter().zip(alpha).map(|(y, a)| (y - a) / (b * value)).collect()
    };
    Ok((value, grad))
}

/// Agreement-stream loss selected by `kind`.
pub fn agreement_loss(kind: AgreementLoss, y_hat: &[f64], alpha: &[f64]) -> Result<(f64, Vec<f64>)> {
    match kind {
        AgreementLoss::Ar => ar_loss_mean(y_hat, alpha),
        AgreementLoss::Rmse => rmse_loss(y_hat, alpha),
    }
}

/// `-|g - p|^gamma * log-likelihood(g | p)` with `p` clamped to
/// `[1e-7, 1 - 1e-7]`. Returns `(value, d value / d p)`.
pub fn focal_loss(p: f64, g: bool, gamma: f64) -> Result<(f64, f64)> {
    if !(gamma >= 0.0) {
        return Err(Error::invalid("gamma", format!("must be >= 0, got {gamma}")));
    }
    let (p, clamped) = clamp_prob(p);
    // m = |g - p|, ll = log-likelihood of the true class
    let (m, dm, ll, dll) = if g {
        (1.0 - p, -1.0, p.ln(), 1.0 / p)
    } else {
        (p, 1.0, (1.0 - p).ln(), -1.0 / (1.0 - p))
    };
    let mg = m.powf(gamma);
    let value = -mg * ll;
    if clamped {
        return Ok((value, 0.0));
    }
    let dmg = if gamma == 0.0 { 0.0 } else { gamma * m.powf(gamma - 1.0) * dm };
    Ok((value, -(dmg * ll + mg * dll)))
}

/// Focusing parameter from the effective number of samples of the
/// majority and minority classes of one annotator.
pub fn gamma_effective_number(n_majority: usize, n_total: usize) -> Result<f64> {
    if n_total < 2 || n_majority == 0 || n_majority >= n_total {
        return Err(Error::invalid(
            "n_majority",
            format!("need 0 < n_majority < n_total with n_total >= 2, got {n_majority}/{n_total}"),
        ));
    }
    let n = n_total as f64;
    let beta = (n - 1.0) / n;
    let minority = (n_total - n_majority) as i32;
    Ok((1.0 - beta.powi(n_majority as i32)) / (1.0 - beta.powi(minority)))
}

/// Per-annotator focusing parameters over a training set. Annotators with a
/// single observed class fall back to [`FALLBACK_GAMMA`]; each fallback is
/// reported in the returned warnings.
pub fn annotator_gammas(data: &AnnotationSet, policy: GammaPolicy) -> (Vec<f64>, Vec<String>) {
    let mut warnings = Vec::new();
    let gammas = (0..data.n_annotators())
        .map(|j| match policy {
            GammaPolicy::Fixed(g) => g,
            GammaPolicy::AutoEffectiveNumber => {
                let c = data.annotator_class_counts(j).expect("index in range");
                gamma_effective_number(c.majority(), c.total).unwrap_or_else(|_| {
                    warnings.push(format!(
                        "annotator `{}` labelled a single class ({} pos / {} neg); gamma = {FALLBACK_GAMMA}",
                        data.annotator_ids()[j],
                        c.positive,
                        c.negative
                    ));
                    FALLBACK_GAMMA
                })
            }
        })
        .collect();
    (gammas, warnings)
}

/// Gamma for a single label column (used when training on majority votes).
pub fn single_column_gamma(labels: &[bool], policy: GammaPolicy) -> f64 {
    match policy {
        GammaPolicy::Fixed(g) => g,
        GammaPolicy::AutoEffectiveNumber => {
            let pos = labels.iter().filter(|&&l| l).count();
            let major = pos.max(labels.len() - pos);
            gamma_effective_number(major, labels.len()).unwrap_or(FALLBACK_GAMMA)
        }
    }
}

/// Soft weighted-kappa loss of one annotator over a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct Wkl {
    /// Soft linear-weighted kappa.
    pub kappa: f64,
    /// `log(1 - kappa)` with kappa clamped at `1 - 1e-7`.
    pub value: f64,
    /// d value / d p for each sample.
    pub grad: Vec<f64>,
}

/// Differentiable kappa between predicted probabilities and hard labels.
///
/// Sample `i` contributes `p_i` to the predicted-positive row and `1 - p_i`
/// to the predicted-negative row of a soft confusion matrix; kappa is
/// `1 - observed / expected` linear-weighted disagreement.
pub fn wkl_loss(p: &[f64], labels: &[bool]) -> Result<Wkl> {
    if p.len() != labels.len() {
        return Err(Error::Shape {
            expected: p.len(),
            got: labels.len(),
        });
    }
    if p.len() < 2 {
        return Err(Error::invalid("batch", format!("weighted kappa loss needs >= 2 samples, got {}", p.len())));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    if pos == 0 || pos == labels.len() {
        return Err(Error::Metric("single-class labels; kappa undefined".into()));
    }
    let b = p.len() as f64;
    let g_mean = pos as f64 / b;
    let p_mean = p.iter().sum::<f64>() / b;
    let observed = p
        .iter()
        .zip(labels)
        .map(|(&pi, &gi)| if gi { 1.0 - pi } else { pi })
        .sum::<f64>()
        / b;
    let expected = p_mean * (1.0 - g_mean) + (1.0 - p_mean) * g_mean;
    let kappa = 1.0 - observed / expected;
    let (k, clamped) = if kappa > 1.0 - KAPPA_EPS {
        (1.0 - KAPPA_EPS, true)
    } else {
        (kappa, false)
    };
    let value = (1.0 - k).ln();
    let grad = if clamped {
        vec![0.0; p.len()]
    } else {
        let dvalue_dkappa = -1.0 / (1.0 - k);
        let de = (1.0 - 2.0 * g_mean) / b;
        labels
            .iter()
            .map(|&gi| {
                let d_o = if gi { -1.0 } else { 1.0 } / b;
                let dk = -(d_o * expected - observed * de) / (expected * expected);
                dvalue_dkappa * dk
            })
            .collect()
    };
    Ok(Wkl { kappa, value, grad })
}

/// Inner loss of the multi-annotator average.
#[derive(Clone, Copy, Debug)]
pub enum Inner<'a> {
    /// Focal loss with one focusing parameter per annotator.
    Focal(&'a [f64]),
    /// Batch-level weighted-kappa loss, squashed by a logistic per annotator.
    Wkl,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultiLoss {
    pub value: f64,
    pub grad: Vec<f64>,
    /// Annotators that contributed a term.
    pub n_used: usize,
}

/// Average over annotators of each annotator's loss on the samples it
/// labelled. `rows[i]` holds the labels of sample `i`, one per annotator.
pub fn multi_annotator_loss(p: &[f64], rows: &[&[Label]], inner: Inner<'_>) -> Result<MultiLoss> {
    try_multi_annotator_loss(p, rows, inner)?
        .ok_or_else(|| Error::Metric("no annotator has usable labels in this batch".into()))
}

/// As [`multi_annotator_loss`], but `Ok(None)` when no annotator contributes.
pub fn try_multi_annotator_loss(
    p: &[f64],
    rows: &[&[Label]],
    inner: Inner<'_>,
) -> Result<Option<MultiLoss>> {
    if p.len() != rows.len() {
        return Err(Error::Shape {
            expected: p.len(),
            got: rows.len(),
        });
    }
    let Some(first) = rows.first() else {
        return Ok(None);
    };
    let n_ann = first.len();
    if rows.iter().any(|r| r.len() != n_ann) {
        return Err(Error::invalid("rows", "ragged label grid"));
    }
    if let Inner::Focal(g) = inner {
        if g.len() != n_ann {
            return Err(Error::Shape {
                expected: n_ann,
                got: g.len(),
            });
        }
    }
    let mut terms = Vec::with_capacity(n_ann);
    let mut idx = Vec::with_capacity(p.len());
    let mut labels = Vec::with_capacity(p.len());
    for j in 0..n_ann {
        idx.clear();
        labels.clear();
        for (i, r) in rows.iter().enumerate() {
            if let Some(l) = r[j] {
                idx.push(i);
                labels.push(l);
            }
        }
        if idx.is_empty() {
            continue;
        }
        match inner {
            Inner::Focal(gammas) => {
                let n = idx.len() as f64;
                let mut value = 0.0;
                let mut grad = Vec::with_capacity(idx.len());
                for (&i, &l) in idx.iter().zip(&labels) {
                    let (v, g) = focal_loss(p[i], l, gammas[j])?;
                    value += v / n;
                    grad.push(g / n);
                }
                terms.push((value, idx.clone(), grad));
            }
            Inner::Wkl => {
                let sub: Vec<f64> = idx.iter().map(|&i| p[i]).collect();
                let pos = labels.iter().filter(|&&l| l).count();
                if sub.len() < 2 || pos == 0 || pos == labels.len() {
                    continue;
                }
                let w = wkl_loss(&sub, &labels)?;
                let s = sigmoid(w.value);
                let ds = s * (1.0 - s);
                let grad = w.grad.iter().map(|g| g * ds).collect();
                terms.push((s, idx.clone(), grad));
            }
        }
    }
    if terms.is_empty() {
        return Ok(None);
    }
    let used = terms.len() as f64;
    let mut value = 0.0;
    let mut grad = vec![0.0; p.len()];
    for (v, ids, g) in &terms {
        value += v / used;
        for (&i, gi) in ids.iter().zip(g) {
            grad[i] += gi / used;
        }
    }
    Ok(Some(MultiLoss {
        value,
        grad,
        n_used: terms.len(),
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    fn rel(a: f64, b: f64) -> f64 {
        let d = (a - b).abs();
        let s = a.abs().max(b.abs());
        if s < 1e-8 { d } else { d / s }
    }

    #[test]
    fn ar_examples() {
        assert_eq!(ar_loss(0.3, 0.3).unwrap().0, 0.0);
        for y in [0.0, 0.2, 0.5, 0.9, 1.0] {
            assert!((ar_loss(y, 0.5).unwrap().0 - 0.5 * (y - 0.5f64).abs()).abs() < 1e-15);
        }
        assert!((ar_loss(0.6, 0.8).unwrap().0 - 0.04).abs() < 1e-12);
        assert!((ar_loss(0.9, 0.8).unwrap().0 - 0.08).abs() < 1e-12);
        assert_eq!(ar_loss(0.9, 0.8).unwrap().1, 0.8);
        assert!((ar_loss(0.6, 0.8).unwrap().1 + 0.2).abs() < 1e-15);
        assert!(ar_loss(1.2, 0.5).is_err());
        assert!(ar_loss(0.5, -0.1).is_err());
    }

    #[test]
    fn ar_is_flat_for_unanimous_targets() {
        // every prediction in [0, 1] already lies on the satisfied side
        for k in 0..=10 {
            let y = k as f64 / 10.0;
            assert_eq!(ar_loss(y, 0.0).unwrap().0, 0.0);
            assert_eq!(ar_loss(y, 1.0).unwrap().0, 0.0);
        }
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse_loss(&[0.2, 0.7], &[0.2, 0.7]).unwrap(), (0.0, vec![0.0, 0.0]));
        assert_eq!(rmse_loss(&[1.0, 1.0], &[0.0, 0.0]).unwrap().0, 1.0);
        assert!((rmse_loss(&[0.5, 0.9], &[0.3, 0.7]).unwrap().0 - 0.2).abs() < 1e-12);
        assert!(rmse_loss(&[0.5], &[0.3, 0.7]).is_err());
    }

    #[test]
    fn focal_examples() {
        assert!((focal_loss(0.5, true, 0.0).unwrap().0 - 2f64.ln()).abs() < 1e-12);
        let expected = -(0.1f64).powi(2) * 0.9f64.ln();
        assert!((focal_loss(0.9, true, 2.0).unwrap().0 - expected).abs() < 1e-15);
        assert!((focal_loss(0.9, true, 2.0).unwrap().0 - 0.001054).abs() < 1e-6);
        assert!(focal_loss(0.999999, true, 2.0).unwrap().0 < 1e-12);
        assert!(focal_loss(1e-6, false, 1.0).unwrap().0 < 1e-11);
        assert!(focal_loss(0.5, true, -1.0).is_err());
        // clamped input still evaluates finitely
        assert!(focal_loss(0.0, true, 0.0).unwrap().0.is_finite());
    }

    #[test]
    fn focal_gradient_grid() {
        for gamma in [0.0, 0.5, 1.0, 2.0, 5.0] {
            for g in [false, true] {
                for k in 1..=99 {
                    let p = k as f64 / 100.0;
                    let (_, grad) = focal_loss(p, g, gamma).unwrap();
                    let num = fd(|x| focal_loss(x, g, gamma).unwrap().0, p, 1e-5);
                    assert!(rel(grad, num) < 1e-4, "p={p} g={g} gamma={gamma}: {grad} vs {num}");
                }
            }
        }
    }

    #[test]
    fn gamma_examples() {
        assert_eq!(gamma_effective_number(50, 100).unwrap(), 1.0);
        let g = gamma_effective_number(90, 100).unwrap();
        let beta: f64 = 0.99;
        assert_eq!(g, (1.0 - beta.powi(90)) / (1.0 - beta.powi(10)));
        assert!((g - 6.23).abs() < 0.01, "{g}");
        let mut prev = gamma_effective_number(50, 100).unwrap();
        for n in 51..100 {
            let g = gamma_effective_number(n, 100).unwrap();
            assert!(g > prev && g >= 1.0);
            prev = g;
        }
        assert!(gamma_effective_number(0, 10).is_err());
        assert!(gamma_effective_number(10, 10).is_err());
    }

    #[test]
    fn wkl_examples() {
        let labels = [true, false, true, false, false, true];
        let hard: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect();
        let w = wkl_loss(&hard, &labels).unwrap();
        assert_eq!(w.kappa, 1.0);
        assert!((w.value - KAPPA_EPS.ln()).abs() < 1e-9);

        let half = vec![0.5; labels.len()];
        let w = wkl_loss(&half, &labels).unwrap();
        assert!(w.kappa.abs() < 1e-15);
        assert!(w.value.abs() < 1e-15);
        assert_eq!(sigmoid(w.value), 0.5);

        let anti: Vec<f64> = hard.iter().map(|h| 1.0 - h).collect();
        let w = wkl_loss(&anti, &labels).unwrap();
        assert!((w.kappa + 1.0).abs() < 1e-15);
        assert!((w.value - 2f64.ln()).abs() < 1e-15);

        assert!(wkl_loss(&[0.3], &[true]).is_err());
        assert!(wkl_loss(&[0.3, 0.4], &[true, true]).is_err());
    }

    #[test]
    fn wkl_soft_kappa_matches_hard_kappa_on_hard_inputs() {
        let a = [true, true, false, false, true, false, false];
        let b = [true, false, false, true, true, false, false];
        let p: Vec<f64> = b.iter().map(|&x| if x { 1.0 } else { 0.0 }).collect();
        let soft = wkl_loss(&p, &a).unwrap().kappa;
        let la: Vec<Label> = a.iter().map(|&x| Some(x)).collect();
        let lb: Vec<Label> = b.iter().map(|&x| Some(x)).collect();
        let hard = crate::metrics::cohens_kappa(&lb, &la).unwrap();
        assert!((soft - hard).abs() < 1e-12);
    }

    #[test]
    fn multi_single_annotator_is_mean_focal() {
        let p = [0.2, 0.7, 0.9];
        let l = [[Some(false)], [Some(true)], [Some(false)]];
        let rows: Vec<&[Label]> = l.iter().map(|r| r.as_slice()).collect();
        let m = multi_annotator_loss(&p, &rows, Inner::Focal(&[1.5])).unwrap();
        let expected: f64 = [(0.2, false), (0.7, true), (0.9, false)]
            .iter()
            .map(|&(p, g)| focal_loss(p, g, 1.5).unwrap().0)
            .sum::<f64>()
            / 3.0;
        assert!((m.value - expected).abs() < 1e-15);
    }

    #[test]
    fn multi_duplicate_annotators_match_single() {
        let p = [0.2, 0.7, 0.9, 0.4];
        let lab = [Some(false), Some(true), Some(true), Some(false)];
        let one: Vec<[Label; 1]> = lab.iter().map(|&l| [l]).collect();
        let two: Vec<[Label; 2]> = lab.iter().map(|&l| [l, l]).collect();
        let r1: Vec<&[Label]> = one.iter().map(|r| r.as_slice()).collect();
        let r2: Vec<&[Label]> = two.iter().map(|r| r.as_slice()).collect();
        for inner in [Inner::Wkl, Inner::Focal(&[2.0, 2.0])] {
            let single_inner = match inner {
                Inner::Wkl => Inner::Wkl,
                Inner::Focal(_) => Inner::Focal(&[2.0]),
            };
            let a = multi_annotator_loss(&p, &r1, single_inner).unwrap();
            let b = multi_annotator_loss(&p, &r2, inner).unwrap();
            assert!((a.value - b.value).abs() < 1e-15);
        }
    }

    #[test]
    fn multi_skips_unusable_annotators() {
        let p = [0.2, 0.7];
        let l = [[None, Some(true)], [None, Some(true)]];
        let rows: Vec<&[Label]> = l.iter().map(|r| r.as_slice()).collect();
        assert_eq!(multi_annotator_loss(&p, &rows, Inner::Focal(&[1.0, 1.0])).unwrap().n_used, 1);
        assert!(multi_annotator_loss(&p, &rows, Inner::Wkl).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(LossConfig::default().validate().is_ok());
        let bad = LossConfig {
            gamma_policy: GammaPolicy::Fixed(-1.0),
            ..LossConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = LossConfig {
            lambda: f64::NAN,
            ..LossConfig::default()
        };
        assert!(bad.validate().is_err());
        let json = r#"{"classifier_loss": "wkl", "agreement_loss": "ar", "gamma_policy": {"fixed": 0.0}}"#;
        let c: LossConfig = serde_json::from_str(json).unwrap();
        assert_eq!(c.gamma_policy, GammaPolicy::Fixed(0.0));
        assert_eq!(c.lambda, 3.0);
    }
}
