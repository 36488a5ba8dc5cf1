//! Multi-annotator binary datasets.
//!
//! Labels are tri-state: an annotator may have labelled a sample positive,
//! negative, or not at all. Missing labels are carried through every
//! computation and never imputed.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

/// One annotation: `Some(true)` positive, `Some(false)` negative, `None` missing.
pub type Label = Option<bool>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub features: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Jsonl,
    Csv,
}

impl Format {
    /// Guess from the file extension; anything but `.csv` is JSONL.
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => Format::Csv,
            _ => Format::Jsonl,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TieBreak {
    Positive,
    #[default]
    Negative,
}

/// Per-annotator label counts over present labels only.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClassCounts {
    pub positive: usize,
    pub negative: usize,
    pub total: usize,
}

impl ClassCounts {
    pub fn majority(&self) -> usize {
        self.positive.max(self.negative)
    }
}

/// Per-sample fraction of present annotations that are positive.
#[derive(Clone, Debug, PartialEq)]
pub struct AgreementTarget(pub Vec<f64>);

impl AgreementTarget {
    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// N samples annotated by J annotators, with optional per-entry weights.
#[derive(Clone, Debug, PartialEq)]
pub struct AnnotationSet {
    samples: Vec<Sample>,
    annotator_ids: Vec<String>,
    /// Row-major N×J.
    labels: Vec<Label>,
    /// Row-major N×J; 1 wherever a label is present.
    weights: Vec<f64>,
    dim: usize,
}

impl AnnotationSet {
    /// Build and validate a dataset. `labels` holds one row per sample.
    pub fn new(
        samples: Vec<Sample>,
        annotator_ids: Vec<String>,
        labels: Vec<Vec<Label>>,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Dataset("dataset has no samples".into()));
        }
        if annotator_ids.len() < 2 {
            return Err(Error::Dataset(format!(
                "need at least 2 annotators, found {}",
                annotator_ids.len()
            )));
        }
        let unique: HashSet<&String> = annotator_ids.iter().collect();
        if unique.len() != annotator_ids.len() {
            return Err(Error::Dataset("duplicate annotator id".into()));
        }
        if labels.len() != samples.len() {
            return Err(Error::Shape {
                expected: samples.len(),
                got: labels.len(),
            });
        }
        let dim = samples[0].features.len();
        if dim == 0 {
            return Err(Error::Dataset("feature dimensionality must be at least 1".into()));
        }
        let j = annotator_ids.len();
        let mut seen = HashSet::new();
        for (s, row) in samples.iter().zip(&labels) {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::Dataset(format!("duplicate sample id `{}`", s.id)));
            }
            if s.features.len() != dim {
                return Err(Error::Dataset(format!(
                    "sample `{}` has {} features, expected {dim}",
                    s.id,
                    s.features.len()
                )));
            }
            if s.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::Dataset(format!("sample `{}` has non-finite features", s.id)));
            }
            if row.len() != j {
                return Err(Error::Shape {
                    expected: j,
                    got: row.len(),
                });
            }
            if row.iter().all(Option::is_none) {
                return Err(Error::Dataset(format!("sample `{}` has no labels", s.id)));
            }
        }
        let labels: Vec<Label> = labels.into_iter().flatten().collect();
        let weights = labels.iter().map(|l| if l.is_some() { 1.0 } else { 0.0 }).collect();
        Ok(AnnotationSet {
            samples,
            annotator_ids,
            labels,
            weights,
            dim,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn n_annotators(&self) -> usize {
        self.annotator_ids.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn annotator_ids(&self) -> &[String] {
        &self.annotator_ids
    }

    pub fn features(&self, i: usize) -> &[f64] {
        &self.samples[i].features
    }

    pub fn label(&self, i: usize, j: usize) -> Label {
        self.labels[i * self.n_annotators() + j]
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.n_annotators() + j]
    }

    pub fn row(&self, i: usize) -> &[Label] {
        let j = self.n_annotators();
        &self.labels[i * j..(i + 1) * j]
    }

    /// All labels of annotator `j`, one per sample.
    pub fn column(&self, j: usize) -> Vec<Label> {
        (0..self.len()).map(|i| self.label(i, j)).collect()
    }

    pub fn n_present(&self) -> usize {
        self.labels.iter().filter(|l| l.is_some()).count()
    }

    /// Dataset restricted to `indices`, in that order. Annotators are kept
    /// even if they have no labels left.
    pub fn subset(&self, indices: &[usize]) -> Result<AnnotationSet> {
        let samples = indices.iter().map(|&i| self.samples[i].clone()).collect();
        let labels = indices.iter().map(|&i| self.row(i).to_vec()).collect();
        AnnotationSet::new(samples, self.annotator_ids.clone(), labels)
    }

    /// Dataset restricted to the annotators in `keep`, in that order. Samples
    /// left without labels are dropped.
    pub fn select_annotators(&self, keep: &[usize]) -> Result<AnnotationSet> {
        let ids = keep.iter().map(|&j| self.annotator_ids[j].clone()).collect();
        let mut samples = Vec::new();
        let mut labels = Vec::new();
        for i in 0..self.len() {
            let row: Vec<Label> = keep.iter().map(|&j| self.label(i, j)).collect();
            if row.iter().any(Option::is_some) {
                samples.push(self.samples[i].clone());
                labels.push(row);
            }
        }
        AnnotationSet::new(samples, ids, labels)
    }

    pub fn agreement_targets(&self) -> AgreementTarget {
        let j = self.n_annotators();
        let values = (0..self.len())
            .map(|i| {
                let mut sum = 0.0;
                let mut present = 0usize;
                for a in 0..j {
                    if let Some(l) = self.label(i, a) {
                        present += 1;
                        if l {
                            sum += self.weight(i, a);
                        }
                    }
                }
                sum / present as f64
            })
            .collect();
        AgreementTarget(values)
    }

    pub fn majority_vote(&self, tie_break: TieBreak) -> Vec<bool> {
        (0..self.len())
            .map(|i| {
                let (pos, neg) = self.row(i).iter().fold((0, 0), |(p, n), l| match l {
                    Some(true) => (p + 1, n),
                    Some(false) => (p, n + 1),
                    None => (p, n),
                });
                match pos.cmp(&neg) {
                    std::cmp::Ordering::Greater => true,
                    std::cmp::Ordering::Less => false,
                    std::cmp::Ordering::Equal => tie_break == TieBreak::Positive,
                }
            })
            .collect()
    }

    pub fn annotator_class_counts(&self, j: usize) -> Result<ClassCounts> {
        if j >= self.n_annotators() {
            return Err(Error::invalid(
                "annotator",
                format!("index {j} out of range for {} annotators", self.n_annotators()),
            ));
        }
        let mut c = ClassCounts {
            positive: 0,
            negative: 0,
            total: 0,
        };
        for i in 0..self.len() {
            match self.label(i, j) {
                Some(true) => c.positive += 1,
                Some(false) => c.negative += 1,
                None => continue,
            }
            c.total += 1;
        }
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>, format: Format) -> Result<AnnotationSet> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        match format {
            Format::Jsonl => parse_jsonl(&text, path),
            Format::Csv => parse_csv(&text, path),
        }
    }

    /// One JSON object per line; missing labels are written as `null`.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for (i, s) in self.samples.iter().enumerate() {
            let labels: BTreeMap<&str, Option<u8>> = self
                .annotator_ids
                .iter()
                .enumerate()
                .map(|(j, id)| (id.as_str(), self.label(i, j).map(u8::from)))
                .collect();
            let line = serde_json::json!({
                "id": s.id,
                "features": s.features,
                "labels": labels,
            });
            out.push_str(&line.to_string());
            out.push('\n');
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("id");
        for k in 1..=self.dim {
            out.push_str(&format!(",f{k}"));
        }
        for id in &self.annotator_ids {
            out.push_str(&format!(",ann:{id}"));
        }
        out.push('\n');
        for (i, s) in self.samples.iter().enumerate() {
            out.push_str(&s.id);
            for v in &s.features {
                out.push_str(&format!(",{v}"));
            }
            for l in self.row(i) {
                out.push(',');
                if let Some(l) = l {
                    out.push(if *l { '1' } else { '0' });
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>, format: Format) -> Result<()> {
        let path = path.as_ref();
        let body = match format {
            Format::Jsonl => self.to_jsonl(),
            Format::Csv => self.to_csv(),
        };
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

struct RawRow {
    line: usize,
    id: String,
    features: Vec<f64>,
    labels: Vec<(String, Label)>,
}

fn parse_jsonl(text: &str, path: &Path) -> Result<AnnotationSet> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut rows = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let v: Value = serde_json::from_str(raw).map_err(|e| parse_err(line, e.to_string()))?;
        let obj = v
            .as_object()
            .ok_or_else(|| parse_err(line, "expected a JSON object".into()))?;
        let id = match obj.get("id") {
            Some(Value::String(s)) => s.clone(),
            Some(Value::Number(n)) => n.to_string(),
            _ => return Err(parse_err(line, "missing string field `id`".into())),
        };
        let features = obj
            .get("features")
            .and_then(Value::as_array)
            .ok_or_else(|| parse_err(line, format!("sample `{id}`: missing array `features`")))?
            .iter()
            .map(|f| {
                f.as_f64()
                    .ok_or_else(|| parse_err(line, format!("sample `{id}`: non-numeric feature")))
            })
            .collect::<Result<Vec<f64>>>()?;
        let label_obj = match obj.get("labels") {
            Some(Value::Object(m)) => m,
            _ => return Err(parse_err(line, format!("sample `{id}`: missing object `labels`"))),
        };
        let mut labels = Vec::with_capacity(label_obj.len());
        for (ann, value) in label_obj {
            let label = match value {
                Value::Null => None,
                Value::Number(n) if n.as_u64() == Some(0) => Some(false),
                Value::Number(n) if n.as_u64() == Some(1) => Some(true),
                Value::Bool(b) => Some(*b),
                other => {
                    return Err(Error::Validation {
                        path: path.to_path_buf(),
                        line,
                        sample: id,
                        message: format!("annotator `{ann}` has non-binary label {other}"),
                    })
                }
            };
            labels.push((ann.clone(), label));
        }
        rows.push(RawRow {
            line,
            id,
            features,
            labels,
        });
    }
    assemble(rows, path)
}

fn parse_csv(text: &str, path: &Path) -> Result<AnnotationSet> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    if header.get(0) != Some("id") {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: "first column must be `id`".into(),
        });
    }
    let mut feature_cols = Vec::new();
    let mut ann_cols = Vec::new();
    for (c, name) in header.iter().enumerate().skip(1) {
        match name.strip_prefix("ann:") {
            Some(ann) => ann_cols.push((c, ann.to_string())),
            None => feature_cols.push(c),
        }
    }
    let mut rows = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let line = k + 2;
        let record = record.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line,
            message: e.to_string(),
        })?;
        let id = record.get(0).unwrap_or_default().to_string();
        let features = feature_cols
            .iter()
            .map(|&c| {
                let cell = record.get(c).unwrap_or_default();
                cell.parse::<f64>().map_err(|_| Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    message: format!("sample `{id}`: bad feature `{cell}`"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        let mut labels = Vec::with_capacity(ann_cols.len());
        for (c, ann) in &ann_cols {
            let label = match record.get(*c).unwrap_or_default() {
                "" => None,
                "0" => Some(false),
                "1" => Some(true),
                other => {
                    return Err(Error::Validation {
                        path: path.to_path_buf(),
                        line,
                        sample: id,
                        message: format!("annotator `{ann}` has non-binary label `{other}`"),
                    })
                }
            };
            labels.push((ann.clone(), label));
        }
        rows.push(RawRow {
            line,
            id,
            features,
            labels,
        });
    }
    assemble(rows, path)
}

/// Resolve annotator columns (sorted by id), then validate row by row so
/// errors carry their line number.
fn assemble(rows: Vec<RawRow>, path: &Path) -> Result<AnnotationSet> {
    let validation = |r: &RawRow, message: String| Error::Validation {
        path: PathBuf::from(path),
        line: r.line,
        sample: r.id.clone(),
        message,
    };
    let ids: Vec<String> = rows
        .iter()
        .flat_map(|r| r.labels.iter().map(|(a, _)| a.clone()))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let index: BTreeMap<&str, usize> = ids.iter().enumerate().map(|(k, a)| (a.as_str(), k)).collect();
    let dim = rows.first().map(|r| r.features.len()).unwrap_or(0);
    let mut seen = HashSet::new();
    let mut samples = Vec::with_capacity(rows.len());
    let mut labels = Vec::with_capacity(rows.len());
    for r in &rows {
        if r.features.len() != dim || dim == 0 {
            return Err(validation(
                r,
                format!("has {} features, expected {dim} (at least 1)", r.features.len()),
            ));
        }
        if r.features.iter().any(|v| !v.is_finite()) {
            return Err(validation(r, "non-finite feature value".into()));
        }
        if !seen.insert(r.id.as_str()) {
            return Err(validation(r, "duplicate sample id".into()));
        }
        let mut row = vec![None; ids.len()];
        for (a, l) in &r.labels {
            row[index[a.as_str()]] = *l;
        }
        if row.iter().all(Option::is_none) {
            return Err(validation(r, "no annotator labelled this sample".into()));
        }
        samples.push(Sample {
            id: r.id.clone(),
            features: r.features.clone(),
        });
        labels.push(row);
    }
    AnnotationSet::new(samples, ids, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(rows: &[&[Label]]) -> AnnotationSet {
        let j = rows[0].len();
        let samples = (0..rows.len())
            .map(|i| Sample {
                id: format!("s{i}"),
                features: vec![i as f64],
            })
            .collect();
        let ids = (0..j).map(|k| format!("a{k}")).collect();
        AnnotationSet::new(samples, ids, rows.iter().map(|r| r.to_vec()).collect()).unwrap()
    }

    const P: Label = Some(true);
    const N: Label = Some(false);

    fn write_tmp(body: &str, ext: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(ext).tempfile().unwrap();
        f.write_all(body.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_jsonl_with_missing_entry() {
        let f = write_tmp(
            r#"{"id": "x1", "features": [0.1, 0.2], "labels": {"a": 1, "b": 0}}
{"id": "x2", "features": [0.3, 0.4], "labels": {"a": 1, "b": null}}
{"id": "x3", "features": [0.5, 0.6], "labels": {"a": 0, "b": 0}}
"#,
            ".jsonl",
        );
        let d = AnnotationSet::load(f.path(), Format::Jsonl).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.n_annotators(), 2);
        assert_eq!(d.n_present(), 5);
        assert_eq!(d.label(1, 1), None);
        assert_eq!(d.weight(0, 0), 1.0);
    }

    #[test]
    fn absent_key_is_missing() {
        let f = write_tmp(
            "{\"id\": \"x1\", \"features\": [1], \"labels\": {\"a\": 1, \"b\": 1}}\n\
             {\"id\": \"x2\", \"features\": [2], \"labels\": {\"a\": 0}}\n",
            ".jsonl",
        );
        let d = AnnotationSet::load(f.path(), Format::Jsonl).unwrap();
        assert_eq!(d.label(1, 1), None);
    }

    #[test]
    fn all_missing_row_names_sample() {
        let f = write_tmp(
            "{\"id\": \"ok\", \"features\": [1], \"labels\": {\"a\": 1, \"b\": 0}}\n\
             {\"id\": \"empty\", \"features\": [2], \"labels\": {\"a\": null, \"b\": null}}\n",
            ".jsonl",
        );
        let err = AnnotationSet::load(f.path(), Format::Jsonl).unwrap_err();
        match &err {
            Error::Validation { line, sample, .. } => {
                assert_eq!(*line, 2);
                assert_eq!(sample, "empty");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_binary_label_rejected() {
        let f = write_tmp(
            "{\"id\": \"x\", \"features\": [1], \"labels\": {\"a\": 2, \"b\": 0}}\n",
            ".jsonl",
        );
        let err = AnnotationSet::load(f.path(), Format::Jsonl).unwrap_err();
        assert!(matches!(err, Error::Validation { line: 1, .. }), "{err}");
    }

    #[test]
    fn malformed_row_reports_line() {
        let f = write_tmp(
            "{\"id\": \"x\", \"features\": [1], \"labels\": {\"a\": 1, \"b\": 0}}\n{not json\n",
            ".jsonl",
        );
        let err = AnnotationSet::load(f.path(), Format::Jsonl).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn csv_roundtrip_matches_jsonl() {
        let d = set(&[&[P, N, None], &[None, N, N], &[P, P, P]]);
        let f = write_tmp(&d.to_csv(), ".csv");
        let back = AnnotationSet::load(f.path(), Format::Csv).unwrap();
        assert_eq!(back, d);
        let g = write_tmp(&d.to_jsonl(), ".jsonl");
        assert_eq!(AnnotationSet::load(g.path(), Format::Jsonl).unwrap(), d);
    }

    #[test]
    fn csv_bad_label() {
        let f = write_tmp("id,f1,ann:a,ann:b\nx,0.5,1,7\n", ".csv");
        let err = AnnotationSet::load(f.path(), Format::Csv).unwrap_err();
        assert!(matches!(err, Error::Validation { line: 2, .. }), "{err}");
    }

    #[test]
    fn agreement_examples() {
        let d = set(&[&[P, P, P], &[N, N, None], &[P, P, N]]);
        let a = d.agreement_targets();
        assert_eq!(a.values()[0], 1.0);
        assert_eq!(a.values()[1], 0.0);
        assert!((a.values()[2] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn majority_examples() {
        let d = set(&[&[P, P, N, None], &[P, N, None, None], &[N, N, N, P]]);
        assert_eq!(d.majority_vote(TieBreak::Negative), vec![true, false, false]);
        assert_eq!(d.majority_vote(TieBreak::Positive), vec![true, true, false]);
    }

    #[test]
    fn class_count_examples() {
        let d = set(&[&[P, N], &[P, N], &[N, N], &[None, N], &[P, N]]);
        assert_eq!(
            d.annotator_class_counts(0).unwrap(),
            ClassCounts { positive: 3, negative: 1, total: 4 }
        );
        assert_eq!(
            d.annotator_class_counts(1).unwrap(),
            ClassCounts { positive: 0, negative: 5, total: 5 }
        );
        let rows: Vec<Vec<Label>> = (0..10).map(|i| vec![Some(i < 4), N]).collect();
        let refs: Vec<&[Label]> = rows.iter().map(Vec::as_slice).collect();
        assert_eq!(
            set(&refs).annotator_class_counts(0).unwrap(),
            ClassCounts { positive: 4, negative: 6, total: 10 }
        );
        assert!(d.annotator_class_counts(2).is_err());
    }

    #[test]
    fn rejects_single_annotator_and_empty_rows() {
        let s = vec![Sample { id: "a".into(), features: vec![1.0] }];
        assert!(AnnotationSet::new(s.clone(), vec!["x".into()], vec![vec![P]]).is_err());
        assert!(
            AnnotationSet::new(s, vec!["x".into(), "y".into()], vec![vec![None, None]]).is_err()
        );
    }

    fn label_strategy() -> impl Strategy<Value = Vec<Vec<Label>>> {
        (2usize..6, 1usize..30).prop_flat_map(|(j, n)| {
            proptest::collection::vec(
                proptest::collection::vec(proptest::option::of(any::<bool>()), j)
                    .prop_filter("row needs a label", |r| r.iter().any(Option::is_some)),
                n,
            )
        })
    }

    fn build(rows: Vec<Vec<Label>>) -> AnnotationSet {
        let refs: Vec<&[Label]> = rows.iter().map(Vec::as_slice).collect();
        set(&refs)
    }

    proptest! {
        #[test]
        fn alpha_is_brute_force_ratio(rows in label_strategy()) {
            let d = build(rows.clone());
            for (i, a) in d.agreement_targets().values().iter().enumerate() {
                let present = rows[i].iter().filter(|l| l.is_some()).count();
                let pos = rows[i].iter().filter(|l| **l == Some(true)).count();
                prop_assert_eq!(*a, pos as f64 / present as f64);
                prop_assert!((0.0..=1.0).contains(a));
            }
        }

        #[test]
        fn alpha_permutation_invariant(rows in label_strategy(), rot in 0usize..6) {
            let d = build(rows.clone());
            let j = rows[0].len();
            let rotated: Vec<Vec<Label>> = rows
                .iter()
                .map(|r| (0..j).map(|k| r[(k + rot) % j]).collect())
                .collect();
            prop_assert_eq!(d.agreement_targets(), build(rotated).agreement_targets());
        }

        #[test]
        fn alpha_is_local(rows in label_strategy()) {
            let d = build(rows.clone());
            let base = d.agreement_targets();
            // Drop one present label of sample 0 (if it keeps another label).
            let mut r = rows.clone();
            let present: Vec<usize> = (0..r[0].len()).filter(|&k| r[0][k].is_some()).collect();
            if present.len() >= 2 {
                r[0][present[0]] = None;
                let after = build(r).agreement_targets();
                prop_assert_eq!(&after.values()[1..], &base.values()[1..]);
            }
        }

        #[test]
        fn vote_rounds_alpha(rows in label_strategy()) {
            let d = build(rows);
            let votes = d.majority_vote(TieBreak::Negative);
            for (a, v) in d.agreement_targets().values().iter().zip(votes) {
                if *a > 0.5 { prop_assert!(v); }
                if *a < 0.5 { prop_assert!(!v); }
            }
        }
    }
}
