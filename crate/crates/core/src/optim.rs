//! Adam with bias-corrected moments, and a reduce-on-plateau schedule.

use serde::{Deserialize, Serialize};

use crate::model::{Gradients, TwoStreamModel};

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update over flat parameter slices paired with their gradients.
    pub fn update_slices(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) {
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (b, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[b], &mut self.v[b]);
            for k in 0..p.len() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g[k];
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g[k] * g[k];
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                p[k] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }

    pub fn update(&mut self, model: &mut TwoStreamModel, grads: &Gradients) {
        let g_blocks = grads.blocks();
        let g: Vec<&[f64]> = g_blocks.iter().map(|b| b.values).collect();
        {
            let mut blocks = model.blocks_mut();
            let mut p: Vec<&mut [f64]> = blocks.iter_mut().map(|b| &mut *b.values).collect();
            self.update_slices(&mut p, &g);
        }
        model.touch();
    }
}

/// What the plateau schedule watches.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Monitor {
    /// Epoch-mean total training loss (lower is better).
    #[default]
    TrainLoss,
    /// Agreement ratio on the held-out split (higher is better).
    ValDelta,
}

/// Multiply the learning rate by `factor` after `patience` consecutive
/// epochs without improvement.
#[derive(Clone, Debug, PartialEq)]
pub struct Plateau {
    pub patience: usize,
    pub factor: f64,
    maximize: bool,
    best: Option<f64>,
    wait: usize,
}

impl Plateau {
    pub fn new(patience: usize, factor: f64, monitor: Monitor) -> Self {
        Plateau {
            patience,
            factor,
            maximize: monitor == Monitor::ValDelta,
            best: None,
            wait: 0,
        }
    }

    /// Record an epoch's metric and return the (possibly reduced) rate.
    pub fn step(&mut self, metric: f64, lr: f64) -> f64 {
        let improved = match self.best {
            None => true,
            Some(b) if self.maximize => metric > b,
            Some(b) => metric < b,
        };
        if improved && metric.is_finite() {
            self.best = Some(metric);
            self.wait = 0;
            return lr;
        }
        self.wait += 1;
        if self.wait >= self.patience {
            self.wait = 0;
            return lr * self.factor;
        }
        lr
    }
}
