//! Two-stream model: shared MLP backbone, a two-way softmax classifier, and
//! an agreement head whose indicator shifts the classifier's decision.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agreement::{AgreementHead, HeadCache, Variant};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::nn::{relu, relu_backward, Dense};
use crate::objective::{Batch, Objective};
use crate::util::sigmoid;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Widths of the rectified-linear backbone layers.
    pub hidden: Vec<usize>,
    pub agreement_variant: Variant,
    /// Number of agreement intervals `n` (the distribution has `n + 1` levels).
    pub bins: usize,
    /// Hidden width of the indicator network.
    pub indicator_hidden: usize,
    /// Stop classifier-loss gradients from reaching the agreement head.
    pub detach_indicator: bool,
    /// Also regress the indicator itself toward the agreement target.
    pub supervise_indicator: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: vec![64, 64],
            agreement_variant: Variant::Distributional,
            bins: 10,
            indicator_hidden: 16,
            detach_indicator: false,
            supervise_indicator: false,
        }
    }
}

/// Regularized positive-class probability.
///
/// Evaluated as `sigmoid(logit(p_hat) + lambda * (2 y_tilde - 1))`, which is
/// the normalized reweighting `p e^a / (p e^a + (1 - p) e^-a)` with
/// `a = lambda (y_tilde - 0.5)`.
pub fn regularize(p_hat: f64, y_tilde: f64, lambda: f64) -> Result<f64> {
    if !(lambda >= 0.0) {
        return Err(Error::invalid("lambda", format!("must be >= 0, got {lambda}")));
    }
    if p_hat <= 0.0 || p_hat >= 1.0 {
        return Ok(p_hat.clamp(0.0, 1.0));
    }
    Ok(regularize_margin((p_hat / (1.0 - p_hat)).ln(), y_tilde, lambda))
}

fn regularize_margin(margin: f64, y_tilde: f64, lambda: f64) -> f64 {
    sigmoid(margin + lambda * (2.0 * y_tilde - 1.0))
}

/// Direct exponential form of [`regularize`], kept for cross-checking.
pub fn regularize_direct(p_hat: f64, y_tilde: f64, lambda: f64) -> f64 {
    let up = (lambda * (y_tilde - 0.5)).exp();
    let down = (lambda * (0.5 - y_tilde)).exp();
    p_hat * up / (p_hat * up + (1.0 - p_hat) * down)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoStreamModel {
    pub config: ModelConfig,
    pub input_dim: usize,
    pub lambda: f64,
    pub backbone: Vec<Dense>,
    /// Features → two class logits.
    pub classifier: Dense,
    pub agreement: AgreementHead,
    #[serde(skip)]
    version: u64,
}

/// Parameter-shaped gradient store.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub backbone: Vec<Dense>,
    pub classifier: Dense,
    pub agreement: AgreementHead,
}

/// Named flat view over a weight or bias array.
pub struct Block<'a> {
    pub name: String,
    pub values: &'a [f64],
}

pub struct BlockMut<'a> {
    pub name: String,
    pub values: &'a mut [f64],
}

fn dense_blocks<'a>(name: &str, d: &'a Dense, out: &mut Vec<Block<'a>>) {
    out.push(Block {
        name: format!("{name}.weight"),
        values: &d.weight,
    });
    out.push(Block {
        name: format!("{name}.bias"),
        values: &d.bias,
    });
}

fn dense_blocks_mut<'a>(name: &str, d: &'a mut Dense, out: &mut Vec<BlockMut<'a>>) {
    out.push(BlockMut {
        name: format!("{name}.weight"),
        values: &mut d.weight,
    });
    out.push(BlockMut {
        name: format!("{name}.bias"),
        values: &mut d.bias,
    });
}

macro_rules! impl_blocks {
    ($t:ty) => {
        impl $t {
            /// Weight and bias arrays in a fixed order.
            pub fn blocks(&self) -> Vec<Block<'_>> {
                let mut out = Vec::new();
                for (k, l) in self.backbone.iter().enumerate() {
                    dense_blocks(&format!("backbone.{k}"), l, &mut out);
                }
                dense_blocks("classifier", &self.classifier, &mut out);
                for (name, l) in self.agreement.layers() {
                    dense_blocks(name, l, &mut out);
                }
                out
            }

            pub fn blocks_mut(&mut self) -> Vec<BlockMut<'_>> {
                let mut out = Vec::new();
                for (k, l) in self.backbone.iter_mut().enumerate() {
                    dense_blocks_mut(&format!("backbone.{k}"), l, &mut out);
                }
                dense_blocks_mut("classifier", &mut self.classifier, &mut out);
                for (name, l) in self.agreement.layers_mut() {
                    dense_blocks_mut(name, l, &mut out);
                }
                out
            }
        }
    };
}

impl_blocks!(TwoStreamModel);
impl_blocks!(Gradients);

/// Per-sample intermediate values.
#[derive(Clone, Debug)]
pub struct SampleCache {
    input: Vec<f64>,
    /// Post-activation output of each backbone layer.
    activations: Vec<Vec<f64>>,
    head: HeadCache,
    p_hat: f64,
    p_tilde: f64,
}

#[derive(Clone, Debug)]
pub struct ForwardCache {
    version: u64,
    samples: Vec<SampleCache>,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub p_hat: Vec<f64>,
    pub p_tilde: Vec<f64>,
    pub y_hat: Vec<f64>,
    pub y_tilde: Vec<f64>,
    pub cache: ForwardCache,
}

/// Upstream gradients, one entry per sample; unused streams may be all zero.
#[derive(Clone, Debug, PartialEq)]
pub struct LossGrads {
    pub p_tilde: Vec<f64>,
    pub p_hat: Vec<f64>,
    pub y_hat: Vec<f64>,
    pub y_tilde: Vec<f64>,
}

impl LossGrads {
    pub fn zeros(n: usize) -> Self {
        LossGrads {
            p_tilde: vec![0.0; n],
            p_hat: vec![0.0; n],
            y_hat: vec![0.0; n],
            y_tilde: vec![0.0; n],
        }
    }
}

/// Predictions only, without a backprop cache.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub p_hat: f64,
    pub p_tilde: f64,
    pub y_hat: f64,
    pub y_tilde: f64,
}

impl TwoStreamModel {
    pub fn new<R: Rng>(input_dim: usize, config: ModelConfig, lambda: f64, rng: &mut R) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::Config("input dimension must be >= 1".into()));
        }
        if config.hidden.contains(&0) {
            return Err(Error::Config("backbone widths must be >= 1".into()));
        }
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::Config(format!("lambda must be finite and >= 0, got {lambda}")));
        }
        let mut width = input_dim;
        let mut backbone = Vec::with_capacity(config.hidden.len());
        for &w in &config.hidden {
            backbone.push(Dense::init(width, w, rng));
            width = w;
        }
        let classifier = Dense::init(width, 2, rng);
        let agreement = AgreementHead::new(
            config.agreement_variant,
            width,
            config.bins,
            config.indicator_hidden,
            rng,
        )?;
        Ok(TwoStreamModel {
            config,
            input_dim,
            lambda,
            backbone,
            classifier,
            agreement,
            version: 0,
        })
    }

    pub fn n_params(&self) -> usize {
        self.blocks().iter().map(|b| b.values.len()).sum()
    }

    /// Monotone counter bumped on every parameter mutation via
    /// [`TwoStreamModel::touch`].
    pub fn version(&self) -> u64 {
        self.version
    }

    /// Mark parameters as changed; invalidates earlier forward caches.
    pub fn touch(&mut self) {
        self.version += 1;
    }

    /// Zero the final layers of both streams, so every output is 0.5.
    pub fn zero_output_layers(&mut self) {
        self.classifier = self.classifier.zeros_like();
        match self.agreement.variant {
            Variant::Distributional => {
                if let Some(l) = self.agreement.indicator_out.as_mut() {
                    *l = l.zeros_like();
                }
                self.agreement.projection = self.agreement.projection.zeros_like();
            }
            Variant::Linear => self.agreement.projection = self.agreement.projection.zeros_like(),
        }
        self.touch();
    }

    pub fn zero_grads(&self) -> Gradients {
        Gradients {
            backbone: self.backbone.iter().map(Dense::zeros_like).collect(),
            classifier: self.classifier.zeros_like(),
            agreement: self.agreement.zeros_like(),
        }
    }

    fn forward_one(&self, x: &[f64]) -> SampleCache {
        let mut activations = Vec::with_capacity(self.backbone.len());
        for layer in &self.backbone {
            let mut h = layer.forward(activations.last().map_or(x, |v: &Vec<f64>| v.as_slice()));
            relu(&mut h);
            activations.push(h);
        }
        let features = activations.last().map_or(x, |v| v.as_slice());
        let z = self.classifier.forward(features);
        let margin = z[1] - z[0];
        let head = self.agreement.forward(features);
        let p_hat = sigmoid(margin);
        let p_tilde = regularize_margin(margin, head.y_tilde, self.lambda);
        SampleCache {
            input: x.to_vec(),
            activations,
            head,
            p_hat,
            p_tilde,
        }
    }

    fn check_width(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::Shape {
                expected: self.input_dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, batch: &[&[f64]]) -> Result<ForwardOutput> {
        for x in batch {
            self.check_width(x)?;
        }
        let samples: Vec<SampleCache> = batch.iter().map(|x| self.forward_one(x)).collect();
        Ok(ForwardOutput {
            p_hat: samples.iter().map(|s| s.p_hat).collect(),
            p_tilde: samples.iter().map(|s| s.p_tilde).collect(),
            y_hat: samples.iter().map(|s| s.head.y_hat).collect(),
            y_tilde: samples.iter().map(|s| s.head.y_tilde).collect(),
            cache: ForwardCache {
                version: self.version,
                samples,
            },
        })
    }

    /// Inference over many samples, fanned out per sample.
    pub fn predict(&self, inputs: &[&[f64]], exec: Exec) -> Result<Vec<Prediction>> {
        for x in inputs {
            self.check_width(x)?;
        }
        Ok(exec.map(inputs, |x| {
            let s = self.forward_one(x);
            Prediction {
                p_hat: s.p_hat,
                p_tilde: s.p_tilde,
                y_hat: s.head.y_hat,
                y_tilde: s.head.y_tilde,
            }
        }))
    }

    pub fn backward(&self, cache: &ForwardCache, upstream: &LossGrads) -> Result<Gradients> {
        if cache.version != self.version {
            return Err(Error::StaleCache {
                cache: cache.version,
                model: self.version,
            });
        }
        let n = cache.samples.len();
        for len in [
            upstream.p_tilde.len(),
            upstream.p_hat.len(),
            upstream.y_hat.len(),
            upstream.y_tilde.len(),
        ] {
            if len != n {
                return Err(Error::Shape { expected: n, got: len });
            }
        }
        let mut grads = self.zero_grads();
        for (i, s) in cache.samples.iter().enumerate() {
            let through_tilde = upstream.p_tilde[i] * s.p_tilde * (1.0 - s.p_tilde);
            let d_margin = through_tilde + upstream.p_hat[i] * s.p_hat * (1.0 - s.p_hat);
            let mut d_y_tilde = upstream.y_tilde[i];
            if !self.config.detach_indicator {
                d_y_tilde += through_tilde * 2.0 * self.lambda;
            }
            let features = s.activations.last().map_or(s.input.as_slice(), |v| v.as_slice());
            let mut d_features = self.classifier.backward(
                features,
                &[-d_margin, d_margin],
                &mut grads.classifier,
            );
            let d_head = self.agreement.backward(
                features,
                &s.head,
                upstream.y_hat[i],
                d_y_tilde,
                &mut grads.agreement,
            );
            for (a, b) in d_features.iter_mut().zip(&d_head) {
                *a += b;
            }
            for k in (0..self.backbone.len()).rev() {
                relu_backward(&s.activations[k], &mut d_features);
                let input = if k == 0 { &s.input } else { &s.activations[k - 1] };
                if k == 0 {
                    self.backbone[0].backward_params(input, &d_features, &mut grads.backbone[0]);
                } else {
                    d_features = self.backbone[k].backward(input, &d_features, &mut grads.backbone[k]);
                }
            }
        }
        Ok(grads)
    }

    /// Checkpoint document; `echo` is stored verbatim (typically the resolved
    /// experiment configuration).
    pub fn to_checkpoint(&self, echo: serde_json::Value) -> Checkpoint {
        let mut layers = Vec::new();
        for (k, l) in self.backbone.iter().enumerate() {
            layers.push(LayerRecord::from_dense(format!("backbone.{k}"), l));
        }
        layers.push(LayerRecord::from_dense("classifier".into(), &self.classifier));
        for (name, l) in self.agreement.layers() {
            layers.push(LayerRecord::from_dense(name.into(), l));
        }
        Checkpoint {
            version: CHECKPOINT_VERSION,
            input_dim: self.input_dim,
            lambda: self.lambda,
            model: self.config.clone(),
            config: echo,
            layers,
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                ck.version
            )));
        }
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let mut model = TwoStreamModel::new(ck.input_dim, ck.model.clone(), ck.lambda, &mut rng)?;
        let mut expected: Vec<(String, &mut Dense)> = Vec::new();
        for (k, l) in model.backbone.iter_mut().enumerate() {
            expected.push((format!("backbone.{k}"), l));
        }
        expected.push(("classifier".into(), &mut model.classifier));
        for (name, l) in model.agreement.layers_mut() {
            expected.push((name.into(), l));
        }
        if expected.len() != ck.layers.len() {
            return Err(Error::Config(format!(
                "checkpoint has {} layers, model expects {}",
                ck.layers.len(),
                expected.len()
            )));
        }
        for ((name, dense), rec) in expected.into_iter().zip(&ck.layers) {
            if rec.name != name
                || rec.inputs != dense.inputs
                || rec.outputs != dense.outputs
                || rec.weight.len() != dense.weight.len()
                || rec.bias.len() != dense.bias.len()
            {
                return Err(Error::Config(format!("checkpoint layer `{}` does not match `{name}`", rec.name)));
            }
            dense.weight.clone_from(&rec.weight);
            dense.bias.clone_from(&rec.bias);
        }
        model.touch();
        Ok(model)
    }

    /// Total objective on a batch (used by the finite-difference checker).
    pub fn objective_value(&self, batch: &Batch<'_>, objective: &Objective) -> Result<f64> {
        let out = self.forward(&batch.features)?;
        Ok(objective.compute(&out, batch)?.0.total)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub name: String,
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs × inputs`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LayerRecord {
    fn from_dense(name: String, d: &Dense) -> Self {
        LayerRecord {
            name,
            inputs: d.inputs,
            outputs: d.outputs,
            weight: d.weight.clone(),
            bias: d.bias.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub input_dim: usize,
    pub lambda: f64,
    pub model: ModelConfig,
    pub config: serde_json::Value,
    pub layers: Vec<LayerRecord>,
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let body = serde_json::to_string_pretty(self)?;
        std::fs::write(path, body + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let v: serde_json::Value = serde_json::from_str(&text)?;
        if v.get("version").is_none() {
            return Err(Error::Config(format!("{}: checkpoint has no version field", path.display())));
        }
        Ok(serde_json::from_value(v)?)
    }
}

/// Largest relative error between analytic and numeric gradients, per block.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BlockError {
    pub name: String,
    pub n_params: usize,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub step: f64,
    pub blocks: Vec<BlockError>,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn worst(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_rel_error).fold(0.0, f64::max)
    }

    pub fn failing(&self) -> Vec<&str> {
        self.blocks
            .iter()
            .filter(|b| !(b.max_rel_error < self.tolerance))
            .map(|b| b.name.as_str())
            .collect()
    }
}

pub const GRAD_CHECK_STEP: f64 = 1e-5;

/// `|a - n| / max(|a|, |n|)`, with the denominator floored so that
/// gradients that are zero in both forms compare equal.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(1e-6);
    (analytic - numeric).abs() / scale
}

/// Compare backpropagated gradients with central differences of the total
/// objective on `batch`.
pub fn grad_check(
    model: &TwoStreamModel,
    batch: &Batch<'_>,
    objective: &Objective,
    tolerance: f64,
) -> Result<GradCheckReport> {
    grad_check_with(model, batch, objective, tolerance, |_| {})
}

/// As [`grad_check`], with a hook that may alter the analytic gradients
/// before comparison.
pub fn grad_check_with(
    model: &TwoStreamModel,
    batch: &Batch<'_>,
    objective: &Objective,
    tolerance: f64,
    tamper: impl FnOnce(&mut Gradients),
) -> Result<GradCheckReport> {
    let out = model.forward(&batch.features)?;
    let (_, upstream) = objective.compute(&out, batch)?;
    let mut analytic = model.backward(&out.cache, &upstream)?;
    tamper(&mut analytic);

    let h = GRAD_CHECK_STEP;
    let mut probe = model.clone();
    let mut blocks = Vec::new();
    let analytic_blocks = analytic.blocks();
    for (b, ab) in analytic_blocks.iter().enumerate() {
        let mut worst: f64 = 0.0;
        for k in 0..ab.values.len() {
            let original = probe.blocks()[b].values[k];
            probe.blocks_mut()[b].values[k] = original + h;
            let plus = probe.objective_value(batch, objective)?;
            probe.blocks_mut()[b].values[k] = original - h;
            let minus = probe.objective_value(batch, objective)?;
            probe.blocks_mut()[b].values[k] = original;
            let numeric = (plus - minus) / (2.0 * h);
            let err = relative_error(ab.values[k], numeric);
            worst = if err.is_nan() { f64::INFINITY } else { worst.max(err) };
        }
        blocks.push(BlockError {
            name: ab.name.clone(),
            n_params: ab.values.len(),
            max_rel_error: worst,
        });
    }
    let passed = blocks.iter().all(|b| b.max_rel_error < tolerance);
    Ok(GradCheckReport {
        tolerance,
        step: h,
        blocks,
        passed,
    })
}
