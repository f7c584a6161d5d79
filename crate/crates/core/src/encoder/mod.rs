//! Small transformer encoder with a masked-language-model head, and mean
//! pooling of its hidden states into function embeddings.

mod model;
mod pretrain;

use std::collections::BTreeMap;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{NamedTensors, Tensor};
use crate::tokenizer::{TokenSequence, MASK, MAX_SEQ_LEN};

pub use pretrain::{pretrain, PretrainConfig, PretrainOutcome};

pub(crate) use model::{backward, forward, ForwardCache};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub layers: usize,
    pub dim: usize,
    pub heads: usize,
    pub ffn_mult: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    /// Reuse the token embedding as the MLM output projection.
    #[serde(default)]
    pub tie_head: bool,
}

impl EncoderConfig {
    /// Desk-scale defaults: 2 layers, d = 32, 2 heads.
    pub fn desk(vocab_size: usize) -> Self {
        EncoderConfig {
            layers: 2,
            dim: 32,
            heads: 2,
            ffn_mult: 4,
            max_len: MAX_SEQ_LEN,
            vocab_size,
            tie_head: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.layers == 0 {
            return bad("encoder needs at least one layer".into());
        }
        if self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return bad(format!("dim {} not divisible by heads {}", self.dim, self.heads));
        }
        if self.max_len < 2 || self.max_len > MAX_SEQ_LEN {
            return bad(format!("max_len {} outside [2, {MAX_SEQ_LEN}]", self.max_len));
        }
        if self.ffn_mult == 0 || self.vocab_size == 0 {
            return bad("ffn_mult and vocab_size must be positive".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub ln1_gain: Tensor,
    pub ln1_bias: Tensor,
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
    pub ln2_gain: Tensor,
    pub ln2_bias: Tensor,
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    pub tok_emb: Tensor,
    pub pos_emb: Tensor,
    pub layers: Vec<LayerParams>,
    pub lnf_gain: Tensor,
    pub lnf_bias: Tensor,
    /// d × V; `None` when the head is tied to `tok_emb`.
    pub head_w: Option<Tensor>,
    pub head_b: Tensor,
}

impl EncoderParams {
    pub fn zeros(config: &EncoderConfig) -> Self {
        let (d, v, f) = (config.dim, config.vocab_size, config.dim * config.ffn_mult);
        let layer = || LayerParams {
            ln1_gain: Tensor::zeros(&[d]),
            ln1_bias: Tensor::zeros(&[d]),
            wq: Tensor::zeros(&[d, d]),
            wk: Tensor::zeros(&[d, d]),
            wv: Tensor::zeros(&[d, d]),
            wo: Tensor::zeros(&[d, d]),
            ln2_gain: Tensor::zeros(&[d]),
            ln2_bias: Tensor::zeros(&[d]),
            w1: Tensor::zeros(&[d, f]),
            b1: Tensor::zeros(&[f]),
            w2: Tensor::zeros(&[f, d]),
            b2: Tensor::zeros(&[d]),
        };
        EncoderParams {
            config: config.clone(),
            tok_emb: Tensor::zeros(&[v, d]),
            pos_emb: Tensor::zeros(&[config.max_len, d]),
            layers: (0..config.layers).map(|_| layer()).collect(),
            lnf_gain: Tensor::zeros(&[d]),
            lnf_bias: Tensor::zeros(&[d]),
            head_w: (!config.tie_head).then(|| Tensor::zeros(&[d, v])),
            head_b: Tensor::zeros(&[v]),
        }
    }

    /// Normal(0, 0.02) weights, unit layer-norm gains, zero biases.
    pub fn init(config: &EncoderConfig, seed: u64) -> Result<Self> {
        Self::init_with_std(config, seed, 0.02)
    }

    pub fn init_with_std(config: &EncoderConfig, seed: u64, std: f64) -> Result<Self> {
        config.validate()?;
        let mut r = rng::seeded(seed);
        let mut p = Self::zeros(config);
        for (name, t) in p.named_mut() {
            if name.ends_with(".gain") {
                t.data_mut().fill(1.0);
            } else if t.shape().len() == 2 {
                *t = Tensor::normal(t.shape(), std, &mut r);
            }
        }
        Ok(p)
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.config)
    }

    pub fn from_tensors(config: EncoderConfig, mut tensors: BTreeMap<String, Tensor>) -> Result<Self> {
        config.validate()?;
        let mut p = Self::zeros(&config);
        for (name, t) in p.named_mut() {
            let src = tensors
                .remove(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
            if src.shape() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} has shape {:?}, config expects {:?}",
                    src.shape(),
                    t.shape()
                )));
            }
            *t = src;
        }
        Ok(p)
    }

    pub fn is_finite(&self) -> bool {
        self.named().iter().all(|(_, t)| t.is_finite())
    }

    fn head_logits(&self, h: &[f64]) -> Vec<f64> {
        let (d, v) = (self.config.dim, self.config.vocab_size);
        let mut logits = self.head_b.data().to_vec();
        match &self.head_w {
            Some(w) => {
                for (k, &hk) in h.iter().enumerate() {
                    for (l, wv) in logits.iter_mut().zip(&w.data()[k * v..(k + 1) * v]) {
                        *l += hk * wv;
                    }
                }
            }
            None => {
                for (tok, l) in logits.iter_mut().enumerate() {
                    *l += crate::tensor::dot(h, &self.tok_emb.data()[tok * d..(tok + 1) * d]);
                }
            }
        }
        logits
    }

    /// Backprop of `head_logits`: accumulates weight gradients into `grads`
    /// and returns ∂L/∂h.
    fn head_backward(&self, h: &[f64], dlogits: &[f64], grads: &mut EncoderParams) -> Vec<f64> {
        let (d, v) = (self.config.dim, self.config.vocab_size);
        for (g, dl) in grads.head_b.data_mut().iter_mut().zip(dlogits) {
            *g += dl;
        }
        let mut dh = vec![0.0; d];
        match (&self.head_w, grads.head_w.as_mut()) {
            (Some(w), Some(gw)) => {
                for k in 0..d {
                    let wrow = &w.data()[k * v..(k + 1) * v];
                    dh[k] = crate::tensor::dot(wrow, dlogits);
                    for (g, dl) in gw.data_mut()[k * v..(k + 1) * v].iter_mut().zip(dlogits) {
                        *g += h[k] * dl;
                    }
                }
            }
            _ => {
                for (tok, &dl) in dlogits.iter().enumerate() {
                    let erow = &self.tok_emb.data()[tok * d..(tok + 1) * d];
                    for k in 0..d {
                        dh[k] += dl * erow[k];
                    }
                    for (g, hk) in grads.tok_emb.row_mut(tok).iter_mut().zip(h) {
                        *g += dl * hk;
                    }
                }
            }
        }
        dh
    }
}

impl NamedTensors for EncoderParams {
    fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![
            ("enc.tok_emb".to_string(), &self.tok_emb),
            ("enc.pos_emb".to_string(), &self.pos_emb),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            let p = format!("enc.layers.{i}");
            out.extend([
                (format!("{p}.ln1.gain"), &l.ln1_gain),
                (format!("{p}.ln1.bias"), &l.ln1_bias),
                (format!("{p}.attn.wq"), &l.wq),
                (format!("{p}.attn.wk"), &l.wk),
                (format!("{p}.attn.wv"), &l.wv),
                (format!("{p}.attn.wo"), &l.wo),
                (format!("{p}.ln2.gain"), &l.ln2_gain),
                (format!("{p}.ln2.bias"), &l.ln2_bias),
                (format!("{p}.ffn.w1"), &l.w1),
                (format!("{p}.ffn.b1"), &l.b1),
                (format!("{p}.ffn.w2"), &l.w2),
                (format!("{p}.ffn.b2"), &l.b2),
            ]);
        }
        out.push(("enc.ln_f.gain".into(), &self.lnf_gain));
        out.push(("enc.ln_f.bias".into(), &self.lnf_bias));
        if let Some(w) = &self.head_w {
            out.push(("enc.mlm.w".into(), w));
        }
        out.push(("enc.mlm.b".into(), &self.head_b));
        out
    }

    fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = vec![
            ("enc.tok_emb".to_string(), &mut self.tok_emb),
            ("enc.pos_emb".to_string(), &mut self.pos_emb),
        ];
        for (i, l) in self.layers.iter_mut().enumerate() {
            let p = format!("enc.layers.{i}");
            out.extend([
                (format!("{p}.ln1.gain"), &mut l.ln1_gain),
                (format!("{p}.ln1.bias"), &mut l.ln1_bias),
                (format!("{p}.attn.wq"), &mut l.wq),
                (format!("{p}.attn.wk"), &mut l.wk),
                (format!("{p}.attn.wv"), &mut l.wv),
                (format!("{p}.attn.wo"), &mut l.wo),
                (format!("{p}.ln2.gain"), &mut l.ln2_gain),
                (format!("{p}.ln2.bias"), &mut l.ln2_bias),
                (format!("{p}.ffn.w1"), &mut l.w1),
                (format!("{p}.ffn.b1"), &mut l.b1),
                (format!("{p}.ffn.w2"), &mut l.w2),
                (format!("{p}.ffn.b2"), &mut l.b2),
            ]);
        }
        out.push(("enc.ln_f.gain".into(), &mut self.lnf_gain));
        out.push(("enc.ln_f.bias".into(), &mut self.lnf_bias));
        if let Some(w) = &mut self.head_w {
            out.push(("enc.mlm.w".into(), w));
        }
        out.push(("enc.mlm.b".into(), &mut self.head_b));
        out
    }
}

/// T × d contextual token states.
#[derive(Clone, Debug, PartialEq)]
pub struct HiddenMatrix(Tensor);

impl HiddenMatrix {
    pub fn new(rows: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::from_vec(&[rows, dim], data).map(HiddenMatrix)
    }

    pub fn rows(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.0.row(i)
    }

    pub fn data(&self) -> &[f64] {
        self.0.data()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaskedSequence {
    pub masked: TokenSequence,
    /// Ascending positions replaced by `[MASK]`.
    pub positions: Vec<usize>,
    pub targets: Vec<u32>,
}

/// Number of masked positions for a sequence of length `t`.
pub fn mask_count(t: usize, rate: f64) -> usize {
    ((rate * (t as f64 - 2.0)).round() as usize).max(1)
}

/// Replaces `max(1, round(rate·(T−2)))` content positions with `[MASK]`;
/// `[CLS]` and `[SEP]` are never candidates.
pub fn mask_tokens(seq: &TokenSequence, rate: f64, seed: u64) -> Result<MaskedSequence> {
    if !(rate > 0.0 && rate < 1.0) {
        return Err(Error::Config(format!("mask rate {rate} outside (0, 1)")));
    }
    let t = seq.len();
    if t <= 2 {
        return Err(Error::NothingToMask);
    }
    let count = mask_count(t, rate);
    let mut r = rng::seeded(seed);
    let mut positions: Vec<usize> = index::sample(&mut r, t - 2, count).into_iter().map(|i| i + 1).collect();
    positions.sort_unstable();
    let targets = positions.iter().map(|&p| seq.ids()[p]).collect();
    Ok(MaskedSequence {
        masked: seq.with_replaced(&positions, MASK),
        positions,
        targets,
    })
}

fn check_sequence(params: &EncoderParams, seq: &TokenSequence) -> Result<()> {
    let cfg = &params.config;
    if seq.len() > cfg.max_len {
        return Err(Error::SequenceTooLong {
            len: seq.len(),
            max: cfg.max_len,
        });
    }
    if let Some(&id) = seq.ids().iter().find(|&&id| id as usize >= cfg.vocab_size) {
        return Err(Error::TokenOutOfRange {
            id,
            size: cfg.vocab_size,
        });
    }
    Ok(())
}

pub fn encode_sequence(params: &EncoderParams, seq: &TokenSequence) -> Result<HiddenMatrix> {
    check_sequence(params, seq)?;
    let cache = forward(params, seq.ids());
    HiddenMatrix::new(seq.len(), params.config.dim, cache.hidden)
}

pub fn mean_pool(h: &HiddenMatrix) -> Result<Vec<f64>> {
    if h.rows() == 0 {
        return Err(Error::Shape("cannot pool an empty hidden matrix".into()));
    }
    let mut f = vec![0.0; h.dim()];
    for r in 0..h.rows() {
        for (a, v) in f.iter_mut().zip(h.row(r)) {
            *a += v;
        }
    }
    let n = h.rows() as f64;
    for a in &mut f {
        *a /= n;
    }
    Ok(f)
}

/// Mean-pooled embedding of one token sequence.
pub fn embed(params: &EncoderParams, seq: &TokenSequence) -> Result<Vec<f64>> {
    mean_pool(&encode_sequence(params, seq)?)
}

/// `−(1/|M|) Σ_{i∈M} log softmax(head(Hᵢ))[targetᵢ]`
pub fn mlm_loss(params: &EncoderParams, masked: &TokenSequence, positions: &[usize], targets: &[u32]) -> Result<f64> {
    let cache = prepare(params, masked, positions, targets)?;
    let d = params.config.dim;
    let mut total = 0.0;
    for (&p, &tgt) in positions.iter().zip(targets) {
        let logits = params.head_logits(&cache.hidden[p * d..(p + 1) * d]);
        total += crate::tensor::log_sum_exp(&logits) - logits[tgt as usize];
    }
    Ok(total / positions.len() as f64)
}

fn prepare(params: &EncoderParams, masked: &TokenSequence, positions: &[usize], targets: &[u32]) -> Result<ForwardCache> {
    if positions.is_empty() || positions.len() != targets.len() {
        return Err(Error::Shape("mask positions and targets must be nonempty and aligned".into()));
    }
    check_sequence(params, masked)?;
    if let Some(&p) = positions.iter().find(|&&p| p >= masked.len()) {
        return Err(Error::Shape(format!("mask position {p} beyond sequence")));
    }
    if let Some(&id) = targets.iter().find(|&&id| id as usize >= params.config.vocab_size) {
        return Err(Error::TokenOutOfRange {
            id,
            size: params.config.vocab_size,
        });
    }
    Ok(forward(params, masked.ids()))
}

/// Loss and its gradient with respect to every encoder tensor.
pub fn mlm_loss_and_grad(
    params: &EncoderParams,
    masked: &TokenSequence,
    positions: &[usize],
    targets: &[u32],
) -> Result<(f64, EncoderParams)> {
    let cache = prepare(params, masked, positions, targets)?;
    let d = params.config.dim;
    let m = positions.len() as f64;
    let mut grads = params.zeros_like();
    let mut d_hidden = vec![0.0; cache.hidden.len()];
    let mut total = 0.0;
    for (&p, &tgt) in positions.iter().zip(targets) {
        let h = &cache.hidden[p * d..(p + 1) * d];
        let logits = params.head_logits(h);
        let mut probs = logits.clone();
        let lse = crate::tensor::softmax_in_place(&mut probs);
        total += lse - logits[tgt as usize];
        let mut dlogits: Vec<f64> = probs.iter().map(|p| p / m).collect();
        dlogits[tgt as usize] -= 1.0 / m;
        let dh = params.head_backward(h, &dlogits, &mut grads);
        for (a, v) in d_hidden[p * d..(p + 1) * d].iter_mut().zip(dh) {
            *a += v;
        }
    }
    backward(params, &cache, &d_hidden, &mut grads);
    Ok((total / m, grads))
}
