//! Two-phase classifier training on frozen function embeddings.
//!
//! Phase 1 walks the full training set in chunks of `S` contracts and takes
//! `E` full-batch steps on each chunk. Phase 2 draws a class-balanced sample
//! every epoch and trains on it in small batches at a lower learning rate.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::classifier::{
    build_contract_matrix, predict_probs, sample_loss_and_grad, binarize, ClassifierParams, ContractMatrix,
    FocalParams, Mode,
};
use crate::dataset::{balanced_indices, IntentLabelVector, SourceContract};
use crate::encoder::{embed, EncoderParams};
use crate::error::{Error, Result};
use crate::extractor::contract_to_units;
use crate::metrics::{confusion, MetricReport};
use crate::optim::{AdamConfig, OptimizerState};
use crate::rng;
use crate::tensor::NamedTensors;
use crate::tokenizer::{encode, Vocabulary};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub phase1_lr: f64,
    /// Contracts per chunk (S).
    pub batch_size: usize,
    /// Chunks per pass (B).
    pub chunks: usize,
    /// Full-batch steps taken on each chunk (E).
    pub epochs_per_chunk: usize,
    /// Passes over the shuffled training set; each pass visits up to B chunks.
    pub rounds: usize,
    pub phase2_lr: f64,
    pub per_class: usize,
    pub phase2_batch: usize,
    pub phase2_epochs: usize,
    pub focal: FocalParams,
    pub seed: u64,
}

impl TrainConfig {
    /// Full-scale schedule: S = 200, B = 80, E = 100.
    pub fn full_scale(seed: u64) -> Self {
        TrainConfig {
            phase1_lr: 1e-3,
            batch_size: 200,
            chunks: 80,
            epochs_per_chunk: 100,
            rounds: 1,
            phase2_lr: 1e-4,
            per_class: 10,
            phase2_batch: 20,
            phase2_epochs: 10,
            focal: FocalParams::default(),
            seed,
        }
    }

    /// Small-corpus schedule: S = 20, B = 10, E = 2, twenty passes, 100
    /// balanced epochs. Both learning rates are ten times the full-scale
    /// values, keeping their 10:1 ratio.
    pub fn desk(seed: u64) -> Self {
        TrainConfig {
            phase1_lr: 1e-2,
            batch_size: 20,
            chunks: 10,
            epochs_per_chunk: 2,
            rounds: 20,
            phase2_lr: 1e-3,
            phase2_epochs: 100,
            ..Self::full_scale(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("batch_size", self.batch_size),
            ("chunks", self.chunks),
            ("epochs_per_chunk", self.epochs_per_chunk),
            ("rounds", self.rounds),
            ("per_class", self.per_class),
            ("phase2_batch", self.phase2_batch),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        for (name, lr) in [("phase1_lr", self.phase1_lr), ("phase2_lr", self.phase2_lr)] {
            if !(lr >= 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("{name} {lr} must be finite and nonnegative")));
            }
        }
        self.focal.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Complete,
    Balanced,
}

impl Phase {
    fn id(self) -> u64 {
        match self {
            Phase::Complete => 1,
            Phase::Balanced => 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub phase: u8,
    pub loss: f64,
}

pub fn loss_trace_csv(trace: &[LossRecord]) -> String {
    let mut s = String::from("step,phase,loss\n");
    for r in trace {
        let _ = writeln!(s, "{},{},{}", r.step, r.phase, r.loss);
    }
    s
}

/// Function embeddings of one contract in source order.
pub fn embed_contract(encoder: &EncoderParams, vocab: &Vocabulary, contract: &SourceContract) -> Result<Vec<Vec<f64>>> {
    contract_to_units(contract)?
        .iter()
        .map(|u| embed(encoder, &encode(&u.code, vocab, encoder.config.max_len)))
        .collect()
}

/// Embeddings memoized by (contract id, vocabulary hash, encoder hash).
#[derive(Clone, Debug, Default)]
pub struct EmbeddingCache {
    entries: HashMap<(String, String, String), Vec<Vec<f64>>>,
}

impl EmbeddingCache {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Turns contracts into classifier inputs with a frozen encoder.
pub struct Featurizer<'a> {
    encoder: &'a EncoderParams,
    vocab: &'a Vocabulary,
    l_cap: usize,
    vocab_hash: String,
    encoder_hash: String,
    cache: Option<EmbeddingCache>,
}

impl<'a> Featurizer<'a> {
    pub fn new(encoder: &'a EncoderParams, vocab: &'a Vocabulary, l_cap: usize, cached: bool) -> Self {
        Featurizer {
            encoder,
            vocab,
            l_cap,
            vocab_hash: vocab.content_hash(),
            encoder_hash: Checkpoint::from_encoder(encoder).content_hash(),
            cache: cached.then(EmbeddingCache::default),
        }
    }

    pub fn encoder(&self) -> &EncoderParams {
        self.encoder
    }

    pub fn cache(&self) -> Option<&EmbeddingCache> {
        self.cache.as_ref()
    }

    fn key(&self, id: &str) -> (String, String, String) {
        (id.to_string(), self.vocab_hash.clone(), self.encoder_hash.clone())
    }

    /// Contracts missing from the cache are embedded in parallel.
    pub fn matrices(&mut self, contracts: &[&SourceContract]) -> Result<Vec<ContractMatrix>> {
        let missing: Vec<&SourceContract> = match &self.cache {
            Some(c) => contracts.iter().copied().filter(|s| !c.entries.contains_key(&self.key(&s.id))).collect(),
            None => contracts.to_vec(),
        };
        let (encoder, vocab) = (self.encoder, self.vocab);
        let fresh: Vec<Vec<Vec<f64>>> = missing
            .par_iter()
            .map(|c| embed_contract(encoder, vocab, c))
            .collect::<Result<_>>()?;
        let l_cap = self.l_cap;
        if self.cache.is_none() {
            return fresh.iter().map(|e| build_contract_matrix(e, l_cap)).collect();
        }
        let keys: Vec<_> = missing.iter().map(|c| self.key(&c.id)).collect();
        let cache = self.cache.as_mut().expect("cache present");
        cache.entries.extend(keys.into_iter().zip(fresh));
        let cache = self.cache.as_ref().expect("cache present");
        contracts
            .iter()
            .map(|c| build_contract_matrix(&cache.entries[&self.key(&c.id)], l_cap))
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ClassifierParams,
    pub trace: Vec<LossRecord>,
}

struct StepRunner<'c> {
    opt: OptimizerState,
    lr: f64,
    focal: FocalParams,
    seed: u64,
    phase: Phase,
    step: usize,
    trace: &'c mut Vec<LossRecord>,
}

impl StepRunner<'_> {
    /// One Adam step on the mean batch loss. Per-sample gradients run in
    /// parallel and are summed in batch order.
    fn step(&mut self, params: &mut ClassifierParams, matrices: &[ContractMatrix], labels: &[IntentLabelVector]) -> Result<()> {
        let results: Vec<Result<(f64, ClassifierParams)>> = matrices
            .par_iter()
            .zip(labels)
            .enumerate()
            .map(|(j, (m, y))| {
                let dropout_seed = rng::derive(self.seed, &[self.phase.id(), self.step as u64, j as u64]);
                sample_loss_and_grad(params, m, &y.0, self.focal, Mode::Train { dropout_seed })
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
        let scale = 1.0 / matrices.len() as f64;
        loss *= scale;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { step: self.trace.len() });
        }
        for (_, g) in grads.named_mut() {
            g.scale(scale);
        }
        self.opt.step(params, &grads, self.lr)?;
        self.trace.push(LossRecord {
            step: self.trace.len(),
            phase: self.phase.id() as u8,
            loss,
        });
        self.step += 1;
        Ok(())
    }
}

fn check_dims(params: &ClassifierParams, feat: &Featurizer<'_>) -> Result<()> {
    if params.config.input_dim != feat.encoder.config.dim {
        return Err(Error::Shape(format!(
            "classifier input {} vs encoder width {}",
            params.config.input_dim, feat.encoder.config.dim
        )));
    }
    Ok(())
}

/// Complete-data phase. Each round reshuffles the data and visits up to
/// `chunks` chunks of `batch_size` contracts; every chunk gets
/// `epochs_per_chunk` full-batch steps.
pub fn train_phase1(
    params: ClassifierParams,
    feat: &mut Featurizer<'_>,
    data: &[SourceContract],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_dims(&params, feat)?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut params = params;
    let mut trace = Vec::new();
    let mut runner = StepRunner {
        opt: OptimizerState::new(AdamConfig::default()),
        lr: cfg.phase1_lr,
        focal: cfg.focal,
        seed: cfg.seed,
        phase: Phase::Complete,
        step: 0,
        trace: &mut trace,
    };
    for round in 0..cfg.rounds {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng::derived(cfg.seed, &[10, round as u64]));
        for chunk in order.chunks(cfg.batch_size).take(cfg.chunks) {
            let contracts: Vec<&SourceContract> = chunk.iter().map(|&i| &data[i]).collect();
            let labels: Vec<IntentLabelVector> = contracts.iter().map(|c| c.labels).collect();
            let matrices = feat.matrices(&contracts)?;
            for _ in 0..cfg.epochs_per_chunk {
                runner.step(&mut params, &matrices, &labels)?;
            }
        }
    }
    Ok(TrainOutcome { params, trace })
}

/// Class-balanced phase with a fresh optimizer state. Each epoch draws
/// `per_class` positives per class, shuffles the draws and steps through
/// them in batches of `phase2_batch`. Loss steps continue from `step_offset`.
pub fn train_phase2(
    params: ClassifierParams,
    feat: &mut Featurizer<'_>,
    data: &[SourceContract],
    cfg: &TrainConfig,
    step_offset: usize,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_dims(&params, feat)?;
    let mut params = params;
    let mut trace = Vec::new();
    let mut runner = StepRunner {
        opt: OptimizerState::new(AdamConfig::default()),
        lr: cfg.phase2_lr,
        focal: cfg.focal,
        seed: cfg.seed,
        phase: Phase::Balanced,
        step: 0,
        trace: &mut trace,
    };
    for epoch in 0..cfg.phase2_epochs {
        let mut draws = balanced_indices(data, cfg.per_class, rng::derive(cfg.seed, &[20, epoch as u64]))?;
        draws.shuffle(&mut rng::derived(cfg.seed, &[21, epoch as u64]));
        for batch in draws.chunks(cfg.phase2_batch) {
            let contracts: Vec<&SourceContract> = batch.iter().map(|&i| &data[i]).collect();
            let labels: Vec<IntentLabelVector> = contracts.iter().map(|c| c.labels).collect();
            let matrices = feat.matrices(&contracts)?;
            runner.step(&mut params, &matrices, &labels)?;
        }
    }
    for r in &mut trace {
        r.step += step_offset;
    }
    Ok(TrainOutcome { params, trace })
}

/// Phase 1 followed by phase 2; the loss trace spans both.
pub fn train_two_phase(
    params: ClassifierParams,
    feat: &mut Featurizer<'_>,
    data: &[SourceContract],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let p1 = train_phase1(params, feat, data, cfg)?;
    let p2 = train_phase2(p1.params, feat, data, cfg, p1.trace.len())?;
    let mut trace = p1.trace;
    trace.extend(p2.trace);
    Ok(TrainOutcome { params: p2.params, trace })
}

/// Inference-mode probabilities for each contract.
pub fn predict_all(params: &ClassifierParams, feat: &mut Featurizer<'_>, data: &[SourceContract]) -> Result<Vec<Vec<f64>>> {
    let refs: Vec<&SourceContract> = data.iter().collect();
    let matrices = feat.matrices(&refs)?;
    matrices.par_iter().map(|m| predict_probs(params, m)).collect()
}

pub fn evaluate(
    params: &ClassifierParams,
    feat: &mut Featurizer<'_>,
    data: &[SourceContract],
    threshold: f64,
) -> Result<MetricReport> {
    let probs = predict_all(params, feat, data)?;
    let preds: Vec<IntentLabelVector> = probs.iter().map(|p| binarize(p, threshold)).collect();
    let truths: Vec<IntentLabelVector> = data.iter().map(|c| c.labels).collect();
    Ok(MetricReport::new(&confusion(&preds, &truths)?, threshold))
}
