//! Fully-connected layers with hand-written backpropagation.

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Affine map `y = W x + b`, `W` stored row-major as `out × in`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            inputs,
            outputs,
            weight: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    /// Weights and biases uniform in `±1/sqrt(fan_in)`.
    pub fn init<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let mut d = Dense::zeros(inputs, outputs);
        for w in d.weight.iter_mut().chain(d.bias.iter_mut()) {
            *w = rng.gen_range(-bound..bound);
        }
        d
    }

    pub fn zeros_like(&self) -> Self {
        Dense::zeros(self.inputs, self.outputs)
    }

    pub fn n_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.inputs);
        self.weight
            .chunks_exact(self.inputs)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }

    /// Accumulate parameter gradients into `grad` and return `dL/dx`.
    pub fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Dense) -> Vec<f64> {
        let mut dx = vec![0.0; self.inputs];
        for (o, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad.bias[o] += g;
            let row = o * self.inputs;
            for k in 0..self.inputs {
                grad.weight[row + k] += g * x[k];
                dx[k] += g * self.weight[row + k];
            }
        }
        dx
    }

    /// Parameter gradients only (no input gradient needed).
    pub fn backward_params(&self, x: &[f64], dy: &[f64], grad: &mut Dense) {
        for (o, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad.bias[o] += g;
            let row = o * self.inputs;
            for k in 0..self.inputs {
                grad.weight[row + k] += g * x[k];
            }
        }
    }
}

pub fn relu(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

/// Zero gradient entries where the rectified activation was inactive.
pub fn relu_backward(activated: &[f64], dy: &mut [f64]) {
    for (a, d) in activated.iter().zip(dy) {
        if *a <= 0.0 {
            *d = 0.0;
        }
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

/// Backpropagate through softmax: `dz_k = s_k (ds_k - <s, ds>)`.
pub fn softmax_backward(s: &[f64], ds: &[f64]) -> Vec<f64> {
    let dot: f64 = s.iter().zip(ds).map(|(a, b)| a * b).sum();
    s.iter().zip(ds).map(|(sk, dk)| sk * (dk - dot)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn dense_backward_matches_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let layer = Dense::init(4, 3, &mut rng);
        let x = [0.3, -1.2, 0.5, 2.0];
        let up = [0.7, -0.2, 1.1];
        let loss = |l: &Dense, x: &[f64]| l.forward(x).iter().zip(&up).map(|(a, b)| a * b).sum::<f64>();
        let mut grad = layer.zeros_like();
        let dx = layer.backward(&x, &up, &mut grad);
        let h = 1e-6;
        for k in 0..layer.weight.len() {
            let mut p = layer.clone();
            p.weight[k] += h;
            let mut m = layer.clone();
            m.weight[k] -= h;
            let num = (loss(&p, &x) - loss(&m, &x)) / (2.0 * h);
            assert!((num - grad.weight[k]).abs() < 1e-8);
        }
        for k in 0..4 {
            let mut xp = x;
            xp[k] += h;
            let mut xm = x;
            xm[k] -= h;
            let num = (loss(&layer, &xp) - loss(&layer, &xm)) / (2.0 * h);
            assert!((num - dx[k]).abs() < 1e-8);
        }
    }

    #[test]
    fn softmax_sums_to_one() {
        let s = softmax(&[1000.0, 999.0, -5.0]);
        assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(s[0] > s[1] && s[1] > s[2]);
    }
}
