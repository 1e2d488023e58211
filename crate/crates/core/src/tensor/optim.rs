//! Stochastic gradient descent with momentum and step learning-rate decay.

use super::{ParamStore, Real};
use crate::error::{Error, Result};

/// Piecewise-constant learning rate: `lr0` times the product of every
/// multiplier whose epoch has been reached.
#[derive(Clone, Debug, PartialEq)]
pub struct LrSchedule {
    pub lr0: f64,
    pub steps: Vec<(usize, f64)>,
}

impl LrSchedule {
    pub fn constant(lr0: f64) -> Self {
        LrSchedule { lr0, steps: Vec::new() }
    }

    /// Multiplies by `factor` at each epoch in `decay_epochs`.
    pub fn step_decay(lr0: f64, decay_epochs: &[usize], factor: f64) -> Self {
        LrSchedule {
            lr0,
            steps: decay_epochs.iter().map(|&e| (e, factor)).collect(),
        }
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.steps
            .iter()
            .filter(|(e, _)| *e <= epoch)
            .fold(self.lr0, |lr, (_, m)| lr * m)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 1e-4,
        }
    }
}

/// Heavy-ball SGD with L2 weight decay folded into the gradient:
/// `g = ∇ + λw`, `v = μv + g`, `w = w − lr·v`.
#[derive(Clone, Debug)]
pub struct Sgd<T> {
    pub config: SgdConfig,
    velocity: Vec<Option<Vec<T>>>,
}

impl<T: Real> Sgd<T> {
    pub fn new(config: SgdConfig) -> Result<Self> {
        if config.lr.is_nan()
            || config.lr <= 0.0
            || !(0.0..1.0).contains(&config.momentum)
            || config.weight_decay.is_nan()
            || config.weight_decay < 0.0
        {
            return Err(Error::config(format!("invalid optimizer settings {config:?}")));
        }
        Ok(Sgd {
            config,
            velocity: Vec::new(),
        })
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    pub fn velocity(&self, id: super::ParamId) -> Option<&[T]> {
        self.velocity.get(id.index()).and_then(|v| v.as_deref())
    }

    /// Updates every trainable entry of `store` from its accumulated gradient.
    pub fn step(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        if self.velocity.len() < store.len() {
            self.velocity.resize_with(store.len(), || None);
        }
        let lr = T::from_f64_lossy(self.config.lr);
        let mu = T::from_f64_lossy(self.config.momentum);
        let wd = T::from_f64_lossy(self.config.weight_decay);
        let ids: Vec<_> = store.ids().filter(|&id| store.is_trainable(id)).collect();
        for &id in &ids {
            if store.get(id).grad().is_none() {
                return Err(Error::MissingGrad(store.name(id).to_string()));
            }
        }
        for id in ids {
            let tensor = store.get_mut(id);
            let n = tensor.numel();
            let v = self.velocity[id.index()].get_or_insert_with(|| vec![T::zero(); n]);
            let (w, g) = tensor.data_and_grad_mut();
            let g = g.expect("checked above");
            for i in 0..n {
                let gi = g[i] + wd * w[i];
                v[i] = mu * v[i] + gi;
                w[i] -= lr * v[i];
            }
        }
        Ok(())
    }
}
