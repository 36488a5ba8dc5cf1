//! Inter-rater agreement: Cohen's kappa, linear weighted kappa, and the
//! agreement ratio of a model against an annotator pool.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::{AnnotationSet, Label};
use crate::error::{Error, Result};
use crate::util::sigmoid;

/// Counts indexed `[first rater][second rater]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionMatrix2x2 {
    pub counts: [[u64; 2]; 2],
}

impl ConfusionMatrix2x2 {
    /// Tally over pairs where both raters are present.
    pub fn from_labels(a: &[Label], b: &[Label]) -> Result<Self> {
        if a.len() != b.len() {
            return Err(Error::Shape {
                expected: a.len(),
                got: b.len(),
            });
        }
        let mut m = Self::default();
        for (x, y) in a.iter().zip(b) {
            if let (Some(x), Some(y)) = (x, y) {
                m.counts[*x as usize][*y as usize] += 1;
            }
        }
        Ok(m)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn kappa(&self) -> Result<f64> {
        let n = self.total();
        if n == 0 {
            return Err(Error::Metric("no overlapping labels".into()));
        }
        let n = n as f64;
        let c = &self.counts;
        let p_o = (c[0][0] + c[1][1]) as f64 / n;
        let a1 = (c[1][0] + c[1][1]) as f64 / n;
        let b1 = (c[0][1] + c[1][1]) as f64 / n;
        let p_e = a1 * b1 + (1.0 - a1) * (1.0 - b1);
        if p_e >= 1.0 {
            // Both raters constant on the same class.
            return Ok(if p_o >= 1.0 { 1.0 } else { 0.0 });
        }
        Ok((p_o - p_e) / (1.0 - p_e))
    }
}

pub fn cohens_kappa(a: &[Label], b: &[Label]) -> Result<f64> {
    ConfusionMatrix2x2::from_labels(a, b)?.kappa()
}

/// Weighted kappa over `categories` ordinal classes with disagreement weight
/// `|x - y| / (categories - 1)`. Pairs with a missing side are dropped.
pub fn linear_weighted_kappa(a: &[Option<u32>], b: &[Option<u32>], categories: u32) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape {
            expected: a.len(),
            got: b.len(),
        });
    }
    if categories < 2 {
        return Err(Error::invalid("categories", "need at least 2"));
    }
    let k = categories as usize;
    let mut table = vec![0u64; k * k];
    for (x, y) in a.iter().zip(b) {
        if let (Some(x), Some(y)) = (*x, *y) {
            if x >= categories || y >= categories {
                return Err(Error::invalid("labels", format!("label outside 0..{categories}")));
            }
            table[x as usize * k + y as usize] += 1;
        }
    }
    let n: u64 = table.iter().sum();
    if n == 0 {
        return Err(Error::Metric("no overlapping labels".into()));
    }
    let n = n as f64;
    let row: Vec<f64> = (0..k).map(|x| (0..k).map(|y| table[x * k + y]).sum::<u64>() as f64 / n).collect();
    let col: Vec<f64> = (0..k).map(|y| (0..k).map(|x| table[x * k + y]).sum::<u64>() as f64 / n).collect();
    let w = |x: usize, y: usize| x.abs_diff(y) as f64 / (k - 1) as f64;
    let mut observed = 0.0;
    let mut expected = 0.0;
    for x in 0..k {
        for y in 0..k {
            observed += w(x, y) * table[x * k + y] as f64 / n;
            expected += w(x, y) * row[x] * col[y];
        }
    }
    if expected <= 0.0 {
        return Ok(if observed <= 0.0 { 1.0 } else { 0.0 });
    }
    Ok(1.0 - observed / expected)
}

/// Model-versus-annotator agreement summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub delta: f64,
    /// Kappa between the predictions and each annotator, keyed by annotator id.
    pub per_annotator_kappa: BTreeMap<String, f64>,
    /// Kappa between annotator pairs, keyed `"<id>|<id>"` in annotator order.
    pub inter_annotator_kappa: BTreeMap<String, f64>,
    pub n_eval: usize,
}

impl EvalReport {
    /// Ratio of mean sigmoid-kappa (model vs annotators) to mean sigmoid-kappa
    /// (annotator pairs), from the stored tables.
    pub fn recompute_delta(&self) -> f64 {
        ratio(
            self.per_annotator_kappa.values().copied(),
            self.inter_annotator_kappa.values().copied(),
        )
    }
}

fn ratio(model: impl Iterator<Item = f64>, pairs: impl Iterator<Item = f64>) -> f64 {
    let (ms, mn) = model.fold((0.0, 0usize), |(s, n), k| (s + sigmoid(k), n + 1));
    let (ps, pn) = pairs.fold((0.0, 0usize), |(s, n), k| (s + sigmoid(k), n + 1));
    (ms / mn as f64) / (ps / pn as f64)
}

pub fn pair_key(a: &str, b: &str) -> String {
    format!("{a}|{b}")
}

/// Agreement ratio of hard binary predictions against every annotator.
pub fn agreement_ratio(predictions: &[bool], data: &AnnotationSet) -> Result<EvalReport> {
    let preds: Vec<Label> = predictions.iter().map(|&p| Some(p)).collect();
    agreement_ratio_labels(&preds, data, None)
}

/// General form: predictions may themselves be missing, and one annotator
/// may be excluded from the pool (used when that annotator is the predictor).
fn agreement_ratio_labels(
    predictions: &[Label],
    data: &AnnotationSet,
    exclude: Option<usize>,
) -> Result<EvalReport> {
    if predictions.len() != data.len() {
        return Err(Error::Shape {
            expected: data.len(),
            got: predictions.len(),
        });
    }
    let pool: Vec<usize> = (0..data.n_annotators()).filter(|&j| Some(j) != exclude).collect();
    let columns: Vec<Vec<Label>> = pool.iter().map(|&j| data.column(j)).collect();
    let ids = data.annotator_ids();

    let mut per_annotator = BTreeMap::new();
    for (col, &j) in columns.iter().zip(&pool) {
        let m = ConfusionMatrix2x2::from_labels(predictions, col)?;
        if m.total() > 0 {
            per_annotator.insert(ids[j].clone(), m.kappa()?);
        }
    }
    let mut inter = BTreeMap::new();
    for x in 0..pool.len() {
        for y in x + 1..pool.len() {
            let m = ConfusionMatrix2x2::from_labels(&columns[x], &columns[y])?;
            if m.total() > 0 {
                inter.insert(pair_key(&ids[pool[x]], &ids[pool[y]]), m.kappa()?);
            }
        }
    }
    if inter.is_empty() {
        return Err(Error::Metric(
            "no annotator pair shares a labelled sample; agreement ratio undefined".into(),
        ));
    }
    if per_annotator.is_empty() {
        return Err(Error::Metric("predictions overlap no annotator".into()));
    }
    let delta = ratio(per_annotator.values().copied(), inter.values().copied());
    Ok(EvalReport {
        delta,
        per_annotator_kappa: per_annotator,
        inter_annotator_kappa: inter,
        n_eval: predictions.len(),
    })
}

/// Score annotator `j` as if it were a model, against the remaining annotators.
pub fn annotator_vs_rest(data: &AnnotationSet, j: usize) -> Result<EvalReport> {
    if j >= data.n_annotators() {
        return Err(Error::invalid(
            "annotator",
            format!("index {j} out of range for {} annotators", data.n_annotators()),
        ));
    }
    agreement_ratio_labels(&data.column(j), data, Some(j))
}
