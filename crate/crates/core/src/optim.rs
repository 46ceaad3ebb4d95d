//! Adam, cosine learning-rate annealing and early stopping.

use oce_autograd::Scalar;

use crate::nn::{ParamKind, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias correction; moments are kept in 64-bit.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam { config, step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update of every trainable parameter holding a gradient. Gradients
    /// are left in place.
    pub fn step<T: Scalar>(&mut self, store: &mut ParamStore<T>, lr: f64) {
        if self.m.is_empty() {
            let sizes: Vec<usize> = store.iter().map(|(_, p)| p.value.numel()).collect();
            self.m = sizes.iter().map(|&n| vec![0.0; n]).collect();
            self.v = sizes.iter().map(|&n| vec![0.0; n]).collect();
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (i, p) in store.iter_mut().enumerate() {
            if p.kind != ParamKind::Trainable {
                continue;
            }
            let Some(g) = &p.grad else { continue };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, w) in p.value.data_mut().iter_mut().enumerate() {
                let gj = g[j].to_f64_lossy();
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                let update = lr * (m[j] / c1) / ((v[j] / c2).sqrt() + eps);
                *w = T::from_f64_lossy(w.to_f64_lossy() - update);
            }
        }
    }
}

/// `lr_min + (lr0 - lr_min) (1 + cos(pi t / T)) / 2`, clamped at `t = T`.
pub fn cosine_lr(lr0: f64, lr_min: f64, t: u64, total: u64) -> f64 {
    let frac = if total == 0 { 1.0 } else { (t.min(total) as f64) / total as f64 };
    lr_min + 0.5 * (lr0 - lr_min) * (1.0 + (std::f64::consts::PI * frac).cos())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StopRule {
    /// Stop after `patience` consecutive epochs without improvement.
    #[default]
    Patience,
    /// Stop unconditionally after `patience` epochs.
    HardStop,
}

#[derive(Debug, Clone)]
pub struct EarlyStopping {
    pub patience: usize,
    pub rule: StopRule,
    best: f64,
    best_epoch: Option<usize>,
    stale: usize,
    epochs: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, rule: StopRule) -> Self {
        EarlyStopping { patience, rule, best: f64::INFINITY, best_epoch: None, stale: 0, epochs: 0 }
    }

    /// Records one epoch's validation loss; returns whether it improved on
    /// the best so far.
    pub fn observe(&mut self, loss: f64) -> bool {
        let improved = loss < self.best;
        if improved {
            self.best = loss;
            self.best_epoch = Some(self.epochs);
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        self.epochs += 1;
        improved
    }

    pub fn should_stop(&self) -> bool {
        match self.rule {
            StopRule::Patience => self.stale >= self.patience,
            StopRule::HardStop => self.epochs >= self.patience,
        }
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best_epoch.map(|e| (e, self.best))
    }
}

/// Linear temperature schedule from `start` to `end` over `steps`.
pub fn temperature(start: f64, end: f64, step: u64, steps: u64) -> f64 {
    if steps == 0 || step >= steps {
        return end;
    }
    start + (end - start) * step as f64 / steps as f64
}
