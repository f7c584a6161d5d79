use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{AdamConfig, OptimizerState};
use crate::rng;
use crate::tensor::NamedTensors;
use crate::tokenizer::TokenSequence;

use super::{mask_tokens, mlm_loss_and_grad, EncoderParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub mask_rate: f64,
    pub seed: u64,
    /// Stop after this many optimizer steps even if epochs remain.
    pub max_steps: Option<usize>,
}

impl PretrainConfig {
    pub fn new(seed: u64) -> Self {
        PretrainConfig {
            epochs: 20,
            batch_size: 8,
            lr: 1e-3,
            weight_decay: 0.01,
            mask_rate: 0.15,
            seed,
            max_steps: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    pub params: EncoderParams,
    /// Mean batch MLM loss before each update.
    pub losses: Vec<f64>,
}

/// AdamW on the MLM objective with a fresh mask per sequence per step.
/// Sequences without maskable content (`[CLS] [SEP]`) are skipped. Gradients
/// are computed per sequence in parallel and summed in batch order.
pub fn pretrain(params: EncoderParams, corpus: &[TokenSequence], cfg: &PretrainConfig) -> Result<PretrainOutcome> {
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(Error::Config("pretraining needs epochs and batch size of at least 1".into()));
    }
    if cfg.lr.is_nan() || cfg.lr < 0.0 {
        return Err(Error::Config(format!("learning rate {} must be nonnegative", cfg.lr)));
    }
    let usable: Vec<&TokenSequence> = corpus.iter().filter(|s| s.len() > 2).collect();
    if usable.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut params = params;
    let mut opt = OptimizerState::new(AdamConfig {
        weight_decay: cfg.weight_decay,
        ..AdamConfig::default()
    });
    let mut losses = Vec::new();
    let mut step = 0usize;
    'epochs: for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..usable.len()).collect();
        order.shuffle(&mut rng::derived(cfg.seed, &[0, epoch as u64]));
        for batch in order.chunks(cfg.batch_size) {
            if cfg.max_steps.is_some_and(|m| step >= m) {
                break 'epochs;
            }
            let results: Vec<Result<(f64, EncoderParams)>> = batch
                .par_iter()
                .enumerate()
                .map(|(j, &i)| {
                    let m = mask_tokens(usable[i], cfg.mask_rate, rng::derive(cfg.seed, &[1, step as u64, j as u64]))?;
                    mlm_loss_and_grad(&params, &m.masked, &m.positions, &m.targets)
                })
                .collect();
            let mut grads = params.zeros_like();
            let mut loss = 0.0;
            for r in results {
                let (l, g) = r?;
                loss += l;
                for ((_, acc), (_, gi)) in grads.named_mut().into_iter().zip(g.named()) {
                    acc.add_assign(gi);
                }
            }
            let scale = 1.0 / batch.len() as f64;
            loss *= scale;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { step });
            }
            for (_, g) in grads.named_mut() {
                g.scale(scale);
            }
            opt.step(&mut params, &grads, cfg.lr)?;
            losses.push(loss);
            step += 1;
        }
    }
    Ok(PretrainOutcome { params, losses })
}
