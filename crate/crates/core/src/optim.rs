//! SGD with momentum and L2 weight decay.

use std::collections::BTreeMap;

use wsfcn_tensor::ParamStore;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            lr: 1e-3,
            momentum: 0.9,
            weight_decay: 5e-4,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr {} must be positive", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config("weight_decay must be non-negative".into()));
        }
        Ok(())
    }
}

/// Per parameter: `v ← μ·v + g + λ·w`, then `w ← w − lr·m·v` with `m` the
/// parameter's learning-rate multiplier.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub config: SgdConfig,
    velocity: BTreeMap<String, Vec<f64>>,
}

impl Sgd {
    pub fn new(config: SgdConfig) -> Self {
        Sgd {
            config,
            velocity: BTreeMap::new(),
        }
    }

    /// Applies one update with learning rate `lr` and zeroes the gradients.
    pub fn step(&mut self, store: &mut ParamStore, lr: f64) {
        let SgdConfig {
            momentum, weight_decay, ..
        } = self.config;
        for (name, param) in store.iter_mut() {
            let mult = param.lr_multiplier();
            let (w, g) = param.value_and_grad_mut();
            let v = self
                .velocity
                .entry(name.to_string())
                .or_insert_with(|| vec![0.0; w.len()]);
            for ((w, &g), v) in w.iter_mut().zip(g).zip(v.iter_mut()) {
                *v = momentum * *v + g + weight_decay * *w;
                *w -= lr * mult * *v;
            }
            param.round();
        }
        store.zero_grads();
    }

    pub fn velocity(&self, name: &str) -> Option<&[f64]> {
        self.velocity.get(name).map(Vec::as_slice)
    }
}
