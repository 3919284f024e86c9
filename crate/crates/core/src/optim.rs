//! Training configuration and first-order optimizers shared by every trainer.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

/// Update rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub const fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Default for OptimizerKind {
    fn default() -> Self {
        Self::adam()
    }
}

/// Hyperparameters of a gradient-descent run.
///
/// `batch_size = None` means full-batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: Option<usize>,
    pub seed: u64,
    pub optimizer: OptimizerKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            epochs: 5000,
            batch_size: None,
            seed: 0,
            optimizer: OptimizerKind::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        ensure(
            self.learning_rate.is_finite() && self.learning_rate > 0.0,
            || Error::InvalidConfig(format!("learning_rate must be positive, got {}", self.learning_rate)),
        )?;
        ensure(self.epochs > 0, || {
            Error::InvalidConfig("epochs must be positive".into())
        })?;
        ensure(self.batch_size != Some(0), || {
            Error::InvalidConfig("batch_size must be positive".into())
        })?;
        if let OptimizerKind::Adam { beta1, beta2, eps } = self.optimizer {
            ensure(
                (0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0,
                || Error::InvalidConfig("adam requires 0 <= beta < 1 and eps > 0".into()),
            )?;
        }
        Ok(())
    }

    /// Effective batch size for a dataset of `n` rows.
    pub fn batch_len(&self, n: usize) -> usize {
        self.batch_size.map_or(n, |b| b.min(n)).max(1)
    }

    pub fn with_lr(mut self, lr: f64) -> Self {
        self.learning_rate = lr;
        self
    }

    pub fn with_epochs(mut self, epochs: usize) -> Self {
        self.epochs = epochs;
        self
    }

    pub fn with_batch(mut self, batch: Option<usize>) -> Self {
        self.batch_size = batch;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

#[derive(Debug, Clone, Default)]
struct Slot {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Optimizer state over an ordered list of flat parameter blocks.
///
/// Blocks are identified by position, so callers must pass them in the same
/// order on every step.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    t: u64,
    slots: Vec<Slot>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Self {
            kind,
            lr,
            t: 0,
            slots: Vec::new(),
        }
    }

    pub fn from_config(cfg: &TrainConfig) -> Self {
        Self::new(cfg.optimizer, cfg.learning_rate)
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Apply one update to every `(params, grads)` block.
    pub fn step(&mut self, blocks: &mut [(&mut [f64], &[f64])]) {
        self.t += 1;
        if self.slots.len() < blocks.len() {
            self.slots.resize_with(blocks.len(), Slot::default);
        }
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in blocks.iter_mut() {
                    debug_assert_eq!(p.len(), g.len());
                    for (pi, gi) in p.iter_mut().zip(g.iter()) {
                        *pi -= self.lr * gi;
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let t = self.t as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for ((p, g), slot) in blocks.iter_mut().zip(self.slots.iter_mut()) {
                    debug_assert_eq!(p.len(), g.len());
                    if slot.m.len() != p.len() {
                        slot.m = vec![0.0; p.len()];
                        slot.v = vec![0.0; p.len()];
                    }
                    for i in 0..p.len() {
                        let gi = g[i];
                        slot.m[i] = beta1 * slot.m[i] + (1.0 - beta1) * gi;
                        slot.v[i] = beta2 * slot.v[i] + (1.0 - beta2) * gi * gi;
                        let mh = slot.m[i] / c1;
                        let vh = slot.v[i] / c2;
                        p[i] -= self.lr * mh / (vh.sqrt() + eps);
                    }
                }
            }
        }
    }
}

/// Shuffled minibatch index ranges for one epoch.
pub(crate) fn epoch_batches<R: rand::Rng>(n: usize, batch: usize, rng: &mut R, drop_last: bool) -> Vec<Vec<usize>> {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..n).collect();
    if batch < n {
        order.shuffle(rng);
    }
    let mut out = Vec::with_capacity(n.div_ceil(batch));
    for chunk in order.chunks(batch) {
        if drop_last && chunk.len() < batch {
            break;
        }
        out.push(chunk.to_vec());
    }
    out
}

pub(crate) fn check_finite_loss(loss: f64, epoch: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence { epoch, loss })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_minimizes_quadratic() {
        let mut x = vec![3.0, -2.0];
        let mut opt = Optimizer::new(OptimizerKind::adam(), 0.1);
        for _ in 0..500 {
            let g: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
            opt.step(&mut [(&mut x[..], &g[..])]);
        }
        assert!(x.iter().all(|v| v.abs() < 1e-3), "{x:?}");
    }

    #[test]
    fn sgd_step_is_plain_gradient_step() {
        let mut x = vec![1.0];
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.5);
        opt.step(&mut [(&mut x[..], &[2.0][..])]);
        assert_eq!(x, vec![0.0]);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig::default().with_lr(0.0).validate().is_err());
        assert!(TrainConfig::default().with_batch(Some(0)).validate().is_err());
        assert!(TrainConfig::default().with_epochs(0).validate().is_err());
    }
}
