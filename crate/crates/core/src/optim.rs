//! Bias-corrected Adam, with optional decoupled weight decay (AdamW) for
//! encoder pretraining.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::NamedTensors;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled decay applied to matrices only (biases, gains and other
    /// one-dimensional tensors are exempt).
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub step: u64,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl OptimizerState {
    pub fn new(config: AdamConfig) -> Self {
        OptimizerState {
            config,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn first_moment(&self, name: &str) -> Option<&[f64]> {
        self.moments.get(name).map(|(m, _)| m.as_slice())
    }

    /// One update. Gradients are checked for finiteness before any
    /// parameter is touched.
    pub fn step<P: NamedTensors>(&mut self, params: &mut P, grads: &P, lr: f64) -> Result<()> {
        let grads = grads.named();
        for (name, g) in &grads {
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient(name.clone()));
            }
        }
        let mut params = params.named_mut();
        if params.len() != grads.len() {
            return Err(Error::Shape("parameter and gradient sets differ".into()));
        }
        self.step += 1;
        let AdamConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for ((name, p), (gname, g)) in params.iter_mut().zip(&grads) {
            if name != gname || p.shape() != g.shape() {
                return Err(Error::Shape(format!("gradient for {name} does not line up")));
            }
            let decay = if p.shape().len() >= 2 { weight_decay } else { 0.0 };
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (vec![0.0; p.len()], vec![0.0; p.len()]));
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *w -= lr * (mhat / (vhat.sqrt() + eps) + decay * *w);
            }
        }
        Ok(())
    }
}

pub fn adam_step<P: NamedTensors>(params: &mut P, grads: &P, state: &mut OptimizerState, lr: f64) -> Result<()> {
    state.step(params, grads, lr)
}
