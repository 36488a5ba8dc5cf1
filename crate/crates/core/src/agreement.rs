//! The agreement stream.
//!
//! The distributional variant predicts a categorical distribution over the
//! agreement levels `0, 1/n, ..., 1`; its expectation is the predicted
//! agreement, and the whole probability vector feeds a two-layer indicator
//! network (rectified-linear hidden layer, logistic output). The linear
//! variant regresses the agreement directly through a logistic unit and uses
//! that prediction as the indicator.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{relu, relu_backward, softmax, softmax_backward, Dense};
use crate::util::sigmoid;

/// Tolerance on the distribution's total mass.
pub const MASS_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Distributional,
    Linear,
}

/// Probabilities over `n + 1` evenly spaced agreement levels on `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AgreementDistribution {
    probabilities: Vec<f64>,
}

impl AgreementDistribution {
    pub fn new(probabilities: Vec<f64>) -> Result<Self> {
        if probabilities.len() < 3 {
            return Err(Error::invalid(
                "probabilities",
                format!("need at least 3 levels (n >= 2), got {}", probabilities.len()),
            ));
        }
        if probabilities.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::invalid("probabilities", "entries must lie in [0, 1]"));
        }
        let mass: f64 = probabilities.iter().sum();
        if (mass - 1.0).abs() > MASS_TOL {
            return Err(Error::invalid("probabilities", format!("sum to {mass}, not 1")));
        }
        Ok(AgreementDistribution { probabilities })
    }

    pub fn from_logits(logits: &[f64]) -> Result<Self> {
        Self::new(softmax(logits))
    }

    /// Number of intervals `n`; there are `n + 1` levels.
    pub fn bins(&self) -> usize {
        self.probabilities.len() - 1
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn bin_values(&self) -> Vec<f64> {
        bin_values(self.bins())
    }

    /// Expected agreement level.
    pub fn readout(&self) -> f64 {
        readout(&self.probabilities)
    }
}

pub fn bin_values(n: usize) -> Vec<f64> {
    (0..=n).map(|k| k as f64 / n as f64).collect()
}

fn readout(g: &[f64]) -> f64 {
    let n = (g.len() - 1) as f64;
    g.iter().enumerate().map(|(k, p)| p * k as f64 / n).sum()
}

pub fn distribution_readout(dist: &AgreementDistribution) -> f64 {
    dist.readout()
}

/// Agreement-stream parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgreementHead {
    pub variant: Variant,
    /// Backbone features → `n + 1` logits (distributional) or 1 logit (linear).
    pub projection: Dense,
    /// Distribution → hidden (distributional only).
    pub indicator_hidden: Option<Dense>,
    /// Hidden → indicator logit (distributional only).
    pub indicator_out: Option<Dense>,
}

/// Intermediate values kept for backpropagation.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadCache {
    /// Distribution probabilities (distributional only).
    pub dist: Vec<f64>,
    /// Rectified hidden activations of the indicator network.
    pub hidden: Vec<f64>,
    pub y_hat: f64,
    pub y_tilde: f64,
}

impl AgreementHead {
    pub fn new<R: Rng>(
        variant: Variant,
        features: usize,
        bins: usize,
        indicator_width: usize,
        rng: &mut R,
    ) -> Result<Self> {
        match variant {
            Variant::Distributional => {
                if bins < 2 {
                    return Err(Error::Config(format!("bins must be >= 2, got {bins}")));
                }
                if indicator_width == 0 {
                    return Err(Error::Config("indicator width must be >= 1".into()));
                }
                Ok(AgreementHead {
                    variant,
                    projection: Dense::init(features, bins + 1, rng),
                    indicator_hidden: Some(Dense::init(bins + 1, indicator_width, rng)),
                    indicator_out: Some(Dense::init(indicator_width, 1, rng)),
                })
            }
            Variant::Linear => Ok(AgreementHead {
                variant,
                projection: Dense::init(features, 1, rng),
                indicator_hidden: None,
                indicator_out: None,
            }),
        }
    }

    pub fn bins(&self) -> Option<usize> {
        match self.variant {
            Variant::Distributional => Some(self.projection.outputs - 1),
            Variant::Linear => None,
        }
    }

    pub fn distribution(&self, features: &[f64]) -> Result<AgreementDistribution> {
        self.require(Variant::Distributional)?;
        AgreementDistribution::from_logits(&self.projection.forward(features))
    }

    /// Indicator computed from a full agreement distribution.
    pub fn indicator(&self, dist: &AgreementDistribution) -> Result<f64> {
        self.require(Variant::Distributional)?;
        let hidden_layer = self.indicator_hidden.as_ref().expect("distributional head");
        if dist.probabilities.len() != hidden_layer.inputs {
            return Err(Error::Shape {
                expected: hidden_layer.inputs,
                got: dist.probabilities.len(),
            });
        }
        Ok(self.indicator_from(&dist.probabilities).1)
    }

    fn indicator_from(&self, g: &[f64]) -> (Vec<f64>, f64) {
        let hidden_layer = self.indicator_hidden.as_ref().expect("distributional head");
        let out_layer = self.indicator_out.as_ref().expect("distributional head");
        let mut h = hidden_layer.forward(g);
        relu(&mut h);
        let y_tilde = sigmoid(out_layer.forward(&h)[0]);
        (h, y_tilde)
    }

    /// Linear variant: the regressed agreement doubles as the indicator.
    pub fn linear_indicator(&self, features: &[f64]) -> Result<(f64, f64)> {
        self.require(Variant::Linear)?;
        let y = sigmoid(self.projection.forward(features)[0]);
        Ok((y, y))
    }

    fn require(&self, v: Variant) -> Result<()> {
        if self.variant == v {
            Ok(())
        } else {
            Err(Error::invalid(
                "variant",
                format!("operation needs a {v:?} head, this head is {:?}", self.variant),
            ))
        }
    }

    pub fn forward(&self, features: &[f64]) -> HeadCache {
        match self.variant {
            Variant::Distributional => {
                let g = softmax(&self.projection.forward(features));
                let y_hat = readout(&g);
                let (hidden, y_tilde) = self.indicator_from(&g);
                HeadCache {
                    dist: g,
                    hidden,
                    y_hat,
                    y_tilde,
                }
            }
            Variant::Linear => {
                let y = sigmoid(self.projection.forward(features)[0]);
                HeadCache {
                    dist: Vec::new(),
                    hidden: Vec::new(),
                    y_hat: y,
                    y_tilde: y,
                }
            }
        }
    }

    /// Accumulate parameter gradients given `dL/dy_hat` and `dL/dy_tilde`;
    /// returns `dL/dfeatures`.
    pub fn backward(
        &self,
        features: &[f64],
        cache: &HeadCache,
        d_y_hat: f64,
        d_y_tilde: f64,
        grad: &mut AgreementHead,
    ) -> Vec<f64> {
        match self.variant {
            Variant::Linear => {
                let y = cache.y_hat;
                let dz = (d_y_hat + d_y_tilde) * y * (1.0 - y);
                self.projection.backward(features, &[dz], &mut grad.projection)
            }
            Variant::Distributional => {
                let hidden_layer = self.indicator_hidden.as_ref().expect("distributional head");
                let out_layer = self.indicator_out.as_ref().expect("distributional head");
                let n = (cache.dist.len() - 1) as f64;
                let mut d_dist: Vec<f64> = (0..cache.dist.len()).map(|k| d_y_hat * k as f64 / n).collect();
                if d_y_tilde != 0.0 {
                    let yt = cache.y_tilde;
                    let d_out = d_y_tilde * yt * (1.0 - yt);
                    let mut d_hidden = out_layer.backward(
                        &cache.hidden,
                        &[d_out],
                        grad.indicator_out.as_mut().expect("distributional grad"),
                    );
                    relu_backward(&cache.hidden, &mut d_hidden);
                    let d_g = hidden_layer.backward(
                        &cache.dist,
                        &d_hidden,
                        grad.indicator_hidden.as_mut().expect("distributional grad"),
                    );
                    for (a, b) in d_dist.iter_mut().zip(d_g) {
                        *a += b;
                    }
                }
                let d_logits = softmax_backward(&cache.dist, &d_dist);
                self.projection.backward(features, &d_logits, &mut grad.projection)
            }
        }
    }

    pub fn zeros_like(&self) -> Self {
        AgreementHead {
            variant: self.variant,
            projection: self.projection.zeros_like(),
            indicator_hidden: self.indicator_hidden.as_ref().map(Dense::zeros_like),
            indicator_out: self.indicator_out.as_ref().map(Dense::zeros_like),
        }
    }

    pub(crate) fn layers(&self) -> Vec<(&'static str, &Dense)> {
        let mut v = vec![("agreement.projection", &self.projection)];
        if let Some(l) = &self.indicator_hidden {
            v.push(("agreement.indicator_hidden", l));
        }
        if let Some(l) = &self.indicator_out {
            v.push(("agreement.indicator_out", l));
        }
        v
    }

    pub(crate) fn layers_mut(&mut self) -> Vec<(&'static str, &mut Dense)> {
        let mut v = vec![("agreement.projection", &mut self.projection)];
        if let Some(l) = &mut self.indicator_hidden {
            v.push(("agreement.indicator_hidden", l));
        }
        if let Some(l) = &mut self.indicator_out {
            v.push(("agreement.indicator_out", l));
        }
        v
    }
}
