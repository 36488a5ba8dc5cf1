//! Synthetic multi-annotator benchmarks.
//!
//! Features come from two Gaussian clusters whose latent class is the
//! reference labelling. Each simulated annotator copies the reference and
//! flips labels at a class-dependent rate, calibrated by bisection so that its
//! Cohen's kappa against the reference hits a requested value.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{AnnotationSet, Format, Label, Sample};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::metrics::{cohens_kappa, pair_key};
use crate::seeds::{self, Stream};

/// Calibration stops once the Monte Carlo kappa is this close to the target.
pub const CALIBRATION_TOL: f64 = 0.01;
pub const CALIBRATION_MAX_ITER: usize = 40;
/// Accepted deviation of realized kappa from its target.
pub const REALIZED_TOL: f64 = 0.02;
/// Monte Carlo sample size per calibration probe.
pub const CALIBRATION_SAMPLES: usize = 20_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotatorSpec {
    /// Requested Cohen's kappa against the reference labels, in (0, 1].
    pub target_kappa: f64,
    /// 0.5 flips both classes equally; above 0.5 flips positives more often
    /// (the annotator under-reports positives), below 0.5 the reverse.
    #[serde(default = "half")]
    pub flip_bias: f64,
}

fn half() -> f64 {
    0.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub n_samples: usize,
    pub feature_dim: usize,
    /// Probability that a sample's reference label is positive.
    #[serde(default = "half")]
    pub class_balance: f64,
    /// Standard deviation of the isotropic noise around the class means at
    /// `±1/sqrt(d)` per coordinate (means two units apart).
    #[serde(default = "one")]
    pub boundary_noise: f64,
    pub annotators: Vec<AnnotatorSpec>,
    #[serde(default)]
    pub missing_rate: f64,
    /// Required by `synth`; experiments derive it from the run seed when absent.
    #[serde(default)]
    pub seed: Option<u64>,
}

fn one() -> f64 {
    1.0
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_samples < 2 {
            return bad(format!("n_samples must be >= 2, got {}", self.n_samples));
        }
        if self.feature_dim == 0 {
            return bad("feature_dim must be >= 1".into());
        }
        if !(self.class_balance > 0.0 && self.class_balance < 1.0) {
            return bad(format!("class_balance must be in (0, 1), got {}", self.class_balance));
        }
        if !(self.boundary_noise >= 0.0 && self.boundary_noise.is_finite()) {
            return bad(format!("boundary_noise must be >= 0, got {}", self.boundary_noise));
        }
        if self.annotators.len() < 2 {
            return bad(format!("need at least 2 annotators, got {}", self.annotators.len()));
        }
        for (j, a) in self.annotators.iter().enumerate() {
            if !(a.target_kappa > 0.0 && a.target_kappa <= 1.0) {
                return bad(format!("annotator {j}: target_kappa must be in (0, 1], got {}", a.target_kappa));
            }
            if !(0.0..=1.0).contains(&a.flip_bias) {
                return bad(format!("annotator {j}: flip_bias must be in [0, 1], got {}", a.flip_bias));
            }
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            return bad(format!("missing_rate must be in [0, 1), got {}", self.missing_rate));
        }
        Ok(())
    }

    pub fn require_seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| Error::Config("synthetic spec needs a `seed`".into()))
    }
}

/// Per-class flip probabilities `(positive, negative)` for base rate `f`.
pub fn class_flip_rates(flip_rate: f64, flip_bias: f64) -> (f64, f64) {
    (
        (2.0 * flip_bias * flip_rate).min(1.0),
        (2.0 * (1.0 - flip_bias) * flip_rate).min(1.0),
    )
}

fn flip_labels(reference: &[bool], uniforms: &[f64], flip_rate: f64, flip_bias: f64) -> Vec<bool> {
    let (fp, fn_) = class_flip_rates(flip_rate, flip_bias);
    reference
        .iter()
        .zip(uniforms)
        .map(|(&r, &u)| if u < if r { fp } else { fn_ } { !r } else { r })
        .collect()
}

fn kappa_bool(a: &[bool], b: &[bool]) -> f64 {
    let la: Vec<Label> = a.iter().map(|&x| Some(x)).collect();
    let lb: Vec<Label> = b.iter().map(|&x| Some(x)).collect();
    cohens_kappa(&la, &lb).expect("non-empty")
}

/// Bisection on the base flip rate over `[0, 0.5]`. `realized` must be
/// non-increasing in the rate.
fn bisect(target: f64, tol: f64, realized: impl Fn(f64) -> f64) -> Result<(f64, f64)> {
    if target >= 1.0 {
        return Ok((0.0, realized(0.0)));
    }
    let (mut lo, mut hi) = (0.0, 0.5);
    let at_hi = realized(hi);
    if at_hi > target {
        return Err(Error::Calibration {
            target,
            achieved: at_hi,
        });
    }
    let mut best = (lo, realized(lo));
    for _ in 0..CALIBRATION_MAX_ITER {
        let mid = 0.5 * (lo + hi);
        let k = realized(mid);
        if (k - target).abs() < (best.1 - target).abs() {
            best = (mid, k);
        }
        if (k - target).abs() <= tol {
            return Ok((mid, k));
        }
        if k > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(best)
}

/// Symmetric-flip calibration (see [`calibrate_flip_rate_biased`]).
pub fn calibrate_flip_rate(target_kappa: f64, class_balance: f64, n: usize, seed: u64) -> Result<f64> {
    calibrate_flip_rate_biased(target_kappa, class_balance, 0.5, n, seed)
}

/// Base flip rate whose Monte Carlo kappa (over `n` simulated reference
/// labels) is within [`CALIBRATION_TOL`] of `target_kappa`. The same simulated
/// draws are reused at every probe so the realized kappa is monotone in the rate.
pub fn calibrate_flip_rate_biased(
    target_kappa: f64,
    class_balance: f64,
    flip_bias: f64,
    n: usize,
    seed: u64,
) -> Result<f64> {
    if !(target_kappa > 0.0 && target_kappa <= 1.0) {
        return Err(Error::invalid("target_kappa", format!("{target_kappa} outside (0, 1]")));
    }
    if n < 2 {
        return Err(Error::invalid("n", "need at least 2 samples"));
    }
    let mut rng = seeds::rng(seed, Stream::Calibrate);
    let reference: Vec<bool> = (0..n).map(|_| rng.gen_bool(class_balance)).collect();
    let uniforms: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
    let realized = |f: f64| kappa_bool(&reference, &flip_labels(&reference, &uniforms, f, flip_bias));
    let (rate, _) = bisect(target_kappa, CALIBRATION_TOL, realized)?;
    Ok(rate)
}

#[derive(Clone, Debug)]
pub struct SynthOutput {
    pub data: AnnotationSet,
    /// Latent reference labels; diagnostic only.
    pub latent: Vec<bool>,
    pub flip_rates: Vec<f64>,
    /// Kappa of each annotator against the reference, before masking.
    pub realized_kappa: Vec<f64>,
}

fn draw_features(rng: &mut ChaCha8Rng, positive: bool, dim: usize, noise: f64) -> Vec<f64> {
    let center = if positive { 1.0 } else { -1.0 } / (dim as f64).sqrt();
    (0..dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            center + noise * z
        })
        .collect()
}

pub fn annotator_id(j: usize) -> String {
    format!("a{}", j + 1)
}

pub fn generate(spec: &SynthSpec) -> Result<SynthOutput> {
    generate_with(spec, Exec::Parallel)
}

pub fn generate_with(spec: &SynthSpec, exec: Exec) -> Result<SynthOutput> {
    spec.validate()?;
    let seed = spec.require_seed()?;
    let n = spec.n_samples;

    let mut rng = seeds::rng_indexed(seed, Stream::Data, 0);
    let mut latent = Vec::with_capacity(n);
    let mut samples = Vec::with_capacity(n);
    let width = (n - 1).to_string().len();
    for i in 0..n {
        let c = rng.gen_bool(spec.class_balance);
        latent.push(c);
        samples.push(Sample {
            id: format!("s{i:0width$}"),
            features: draw_features(&mut rng, c, spec.feature_dim, spec.boundary_noise),
        });
    }

    let annotators: Vec<(usize, &AnnotatorSpec)> = spec.annotators.iter().enumerate().collect();
    let columns = exec.try_map(&annotators, |&(j, a)| -> Result<(Vec<bool>, f64, f64)> {
        let calib_seed = seed ^ ((j as u64 + 1) << 40);
        let rate = calibrate_flip_rate_biased(
            a.target_kappa,
            spec.class_balance,
            a.flip_bias,
            CALIBRATION_SAMPLES,
            calib_seed,
        )?;
        let mut r = seeds::rng_indexed(seed, Stream::Data, j as u64 + 1);
        let uniforms: Vec<f64> = (0..n).map(|_| r.gen()).collect();
        let realized = |f: f64| kappa_bool(&latent, &flip_labels(&latent, &uniforms, f, a.flip_bias));
        let mut k = realized(rate);
        let mut rate = rate;
        if (k - a.target_kappa).abs() > REALIZED_TOL / 2.0 {
            // Refine on the realized sample itself.
            (rate, k) = bisect(a.target_kappa, REALIZED_TOL / 4.0, realized)?;
        }
        if (k - a.target_kappa).abs() > REALIZED_TOL {
            return Err(Error::Calibration {
                target: a.target_kappa,
                achieved: k,
            });
        }
        Ok((flip_labels(&latent, &uniforms, rate, a.flip_bias), rate, k))
    })?;

    let j = columns.len();
    let mut mask_rng = seeds::rng(seed, Stream::Mask);
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let row: Vec<Label> = loop {
            let keep: Vec<bool> = (0..j).map(|_| !mask_rng.gen_bool(spec.missing_rate)).collect();
            if keep.iter().any(|&k| k) {
                break (0..j).map(|a| keep[a].then_some(columns[a].0[i])).collect();
            }
        };
        rows.push(row);
    }
    let ids = (0..j).map(annotator_id).collect();
    let data = AnnotationSet::new(samples, ids, rows)?;
    Ok(SynthOutput {
        data,
        latent,
        flip_rates: columns.iter().map(|c| c.1).collect(),
        realized_kappa: columns.iter().map(|c| c.2).collect(),
    })
}

/// Summary written next to a generated dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub spec: SynthSpec,
    pub target_kappa: BTreeMap<String, f64>,
    pub realized_kappa_vs_reference: BTreeMap<String, f64>,
    pub flip_rate: BTreeMap<String, f64>,
    /// Pairwise kappa between annotators over their overlapping labels.
    pub pairwise_kappa: BTreeMap<String, f64>,
    pub missing_fraction: f64,
}

impl SynthOutput {
    pub fn sidecar(&self, spec: &SynthSpec) -> Sidecar {
        let ids = self.data.annotator_ids();
        let by_id = |v: &[f64]| ids.iter().cloned().zip(v.iter().copied()).collect::<BTreeMap<_, _>>();
        let cols: Vec<Vec<Label>> = (0..ids.len()).map(|j| self.data.column(j)).collect();
        let mut pairwise = BTreeMap::new();
        for a in 0..ids.len() {
            for b in a + 1..ids.len() {
                if let Ok(k) = cohens_kappa(&cols[a], &cols[b]) {
                    pairwise.insert(pair_key(&ids[a], &ids[b]), k);
                }
            }
        }
        let total = (self.data.len() * ids.len()) as f64;
        Sidecar {
            spec: spec.clone(),
            target_kappa: by_id(&spec.annotators.iter().map(|a| a.target_kappa).collect::<Vec<_>>()),
            realized_kappa_vs_reference: by_id(&self.realized_kappa),
            flip_rate: by_id(&self.flip_rates),
            pairwise_kappa: pairwise,
            missing_fraction: 1.0 - self.data.n_present() as f64 / total,
        }
    }

    /// Write `<stem>.jsonl`, `<stem>.sidecar.json`, and the diagnostic
    /// `<stem>.latent.json` into `dir`. Returns the dataset path.
    pub fn write(&self, spec: &SynthSpec, dir: &Path, stem: &str) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let data_path = dir.join(format!("{stem}.jsonl"));
        self.data.save(&data_path, Format::Jsonl)?;
        let side = dir.join(format!("{stem}.sidecar.json"));
        let body = serde_json::to_string_pretty(&self.sidecar(spec))? + "\n";
        std::fs::write(&side, body).map_err(|e| Error::io(&side, e))?;
        let latent = serde_json::json!({
            "diagnostic_only": true,
            "note": "latent generator labels; not used for training or evaluation",
            "labels": self
                .data
                .samples()
                .iter()
                .zip(&self.latent)
                .map(|(s, &l)| (s.id.clone(), u8::from(l)))
                .collect::<BTreeMap<_, _>>(),
        });
        let lat = dir.join(format!("{stem}.latent.json"));
        std::fs::write(&lat, serde_json::to_string_pretty(&latent)? + "\n").map_err(|e| Error::io(&lat, e))?;
        Ok(data_path)
    }
}
