//! Contract-level classifier: zero-padded function-embedding matrix, masked
//! BiLSTM, dropout, sigmoid head and focal loss.

mod focal;
mod lstm;

use std::collections::BTreeMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dataset::{IntentLabelVector, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{sigmoid, NamedTensors, Tensor};

pub use focal::{batch_loss, focal_loss, FocalParams, EPS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    /// Function embedding width d.
    pub input_dim: usize,
    /// Hidden size per direction U.
    pub units: usize,
    pub classes: usize,
    pub dropout: f64,
    /// Row capacity L of the contract matrix.
    pub l_cap: usize,
}

impl ClassifierConfig {
    /// Desk defaults: U = 16, L = 16, dropout 0.5, ten classes.
    pub fn desk(input_dim: usize) -> Self {
        ClassifierConfig {
            input_dim,
            units: 16,
            classes: NUM_CLASSES,
            dropout: 0.5,
            l_cap: 16,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.units == 0 || self.classes == 0 || self.l_cap == 0 {
            return Err(Error::Config("classifier dimensions must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// L × d matrix whose first `valid` rows are function embeddings in source
/// order; the rest are zero.
#[derive(Clone, Debug, PartialEq)]
pub struct ContractMatrix {
    rows: Tensor,
    valid: usize,
}

impl ContractMatrix {
    pub fn valid(&self) -> usize {
        self.valid
    }

    pub fn capacity(&self) -> usize {
        self.rows.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.rows.shape()[1]
    }

    pub fn rows(&self) -> &Tensor {
        &self.rows
    }

    /// Same contents at a different capacity; truncates if smaller.
    pub fn with_capacity(&self, l_cap: usize) -> ContractMatrix {
        let d = self.dim();
        let valid = self.valid.min(l_cap);
        let mut rows = Tensor::zeros(&[l_cap, d]);
        rows.data_mut()[..valid * d].copy_from_slice(&self.rows.data()[..valid * d]);
        ContractMatrix { rows, valid }
    }
}

/// Keeps the first `min(N, L)` embeddings; the tail of longer contracts is
/// dropped.
pub fn build_contract_matrix(embeddings: &[Vec<f64>], l_cap: usize) -> Result<ContractMatrix> {
    let first = embeddings
        .first()
        .ok_or_else(|| Error::Shape("contract has no function embeddings".into()))?;
    if l_cap == 0 {
        return Err(Error::Config("matrix capacity must be at least 1".into()));
    }
    let d = first.len();
    if let Some(bad) = embeddings.iter().find(|e| e.len() != d) {
        return Err(Error::Shape(format!("embedding width {} differs from {d}", bad.len())));
    }
    let valid = embeddings.len().min(l_cap);
    let mut rows = Tensor::zeros(&[l_cap, d]);
    for (i, e) in embeddings.iter().take(valid).enumerate() {
        rows.row_mut(i).copy_from_slice(e);
    }
    Ok(ContractMatrix { rows, valid })
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    /// d × 4U
    pub w_in: Tensor,
    /// U × 4U
    pub w_rec: Tensor,
    /// 4U
    pub bias: Tensor,
}

impl LstmParams {
    fn zeros(d: usize, u: usize) -> Self {
        LstmParams {
            w_in: Tensor::zeros(&[d, 4 * u]),
            w_rec: Tensor::zeros(&[u, 4 * u]),
            bias: Tensor::zeros(&[4 * u]),
        }
    }

    pub fn units(&self) -> usize {
        self.w_rec.shape()[0]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierParams {
    pub config: ClassifierConfig,
    pub fwd: LstmParams,
    pub bwd: LstmParams,
    /// C × 2U
    pub head_w: Tensor,
    pub head_b: Tensor,
}

impl ClassifierParams {
    pub fn zeros(config: &ClassifierConfig) -> Self {
        let (d, u, c) = (config.input_dim, config.units, config.classes);
        ClassifierParams {
            config: config.clone(),
            fwd: LstmParams::zeros(d, u),
            bwd: LstmParams::zeros(d, u),
            head_w: Tensor::zeros(&[c, 2 * u]),
            head_b: Tensor::zeros(&[c]),
        }
    }

    /// Glorot-uniform input and head weights, U(±1/√U) recurrent weights,
    /// forget-gate bias 1.
    pub fn init(config: &ClassifierConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (d, u, c) = (config.input_dim, config.units, config.classes);
        let mut r = rng::seeded(seed);
        let glorot = |fan_in: usize, fan_out: usize| (6.0 / (fan_in + fan_out) as f64).sqrt();
        let lstm = |r: &mut rng::Rng| {
            let mut bias = Tensor::zeros(&[4 * u]);
            bias.data_mut()[u..2 * u].fill(1.0);
            LstmParams {
                w_in: Tensor::uniform(&[d, 4 * u], glorot(d, 4 * u), r),
                w_rec: Tensor::uniform(&[u, 4 * u], 1.0 / (u as f64).sqrt(), r),
                bias,
            }
        };
        let fwd = lstm(&mut r);
        let bwd = lstm(&mut r);
        Ok(ClassifierParams {
            config: config.clone(),
            fwd,
            bwd,
            head_w: Tensor::uniform(&[c, 2 * u], glorot(2 * u, c), &mut r),
            head_b: Tensor::zeros(&[c]),
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.config)
    }

    pub fn from_tensors(config: ClassifierConfig, mut tensors: BTreeMap<String, Tensor>) -> Result<Self> {
        config.validate()?;
        let mut p = Self::zeros(&config);
        for (name, t) in p.named_mut() {
            let src = tensors
                .remove(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
            if src.shape() != t.shape() {
                return Err(Error::Checkpoint(format!("tensor {name} has shape {:?}", src.shape())));
            }
            *t = src;
        }
        Ok(p)
    }
}

impl NamedTensors for ClassifierParams {
    fn named(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("cls.fwd.w_in".into(), &self.fwd.w_in),
            ("cls.fwd.w_rec".into(), &self.fwd.w_rec),
            ("cls.fwd.bias".into(), &self.fwd.bias),
            ("cls.bwd.w_in".into(), &self.bwd.w_in),
            ("cls.bwd.w_rec".into(), &self.bwd.w_rec),
            ("cls.bwd.bias".into(), &self.bwd.bias),
            ("cls.head.w".into(), &self.head_w),
            ("cls.head.b".into(), &self.head_b),
        ]
    }

    fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![
            ("cls.fwd.w_in".into(), &mut self.fwd.w_in),
            ("cls.fwd.w_rec".into(), &mut self.fwd.w_rec),
            ("cls.fwd.bias".into(), &mut self.fwd.bias),
            ("cls.bwd.w_in".into(), &mut self.bwd.w_in),
            ("cls.bwd.w_rec".into(), &mut self.bwd.w_rec),
            ("cls.bwd.bias".into(), &mut self.bwd.bias),
            ("cls.head.w".into(), &mut self.head_w),
            ("cls.head.b".into(), &mut self.head_b),
        ]
    }
}

struct BiTrace {
    fwd: lstm::Trace,
    bwd: lstm::Trace,
}

fn check_matrix(params: &ClassifierParams, m: &ContractMatrix) -> Result<()> {
    if m.valid == 0 {
        return Err(Error::Shape("contract matrix has no valid rows".into()));
    }
    if m.dim() != params.config.input_dim {
        return Err(Error::Shape(format!(
            "matrix width {} vs classifier input {}",
            m.dim(),
            params.config.input_dim
        )));
    }
    Ok(())
}

fn bilstm_trace(params: &ClassifierParams, m: &ContractMatrix) -> BiTrace {
    BiTrace {
        fwd: lstm::run(&params.fwd, &m.rows, 0..m.valid),
        bwd: lstm::run(&params.bwd, &m.rows, (0..m.valid).rev()),
    }
}

/// `[h_fwd(valid−1) ∥ h_bwd(0)]`, length 2U. Padded rows never enter
/// either recurrence.
pub fn bilstm_forward(params: &ClassifierParams, m: &ContractMatrix) -> Result<Vec<f64>> {
    check_matrix(params, m)?;
    let t = bilstm_trace(params, m);
    Ok([t.fwd.h, t.bwd.h].concat())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Infer,
    /// Inverted dropout with a mask drawn from this seed.
    Train { dropout_seed: u64 },
}

/// Per-coordinate multipliers: 0 for dropped units, `1/(1−p)` for kept ones.
pub fn dropout_mask(len: usize, p: f64, seed: u64) -> Vec<f64> {
    if p == 0.0 {
        return vec![1.0; len];
    }
    let keep = 1.0 - p;
    let mut r = rng::seeded(seed);
    (0..len)
        .map(|_| if r.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
        .collect()
}

fn head_logits(params: &ClassifierParams, h: &[f64]) -> Vec<f64> {
    params
        .head_b
        .data()
        .iter()
        .enumerate()
        .map(|(c, b)| b + crate::tensor::dot(params.head_w.row(c), h))
        .collect()
}

/// `σ(W·Dropout(h) + b)`; dropout only in train mode.
pub fn classify(params: &ClassifierParams, h: &[f64], mode: Mode) -> Result<Vec<f64>> {
    let width = 2 * params.config.units;
    if h.len() != width {
        return Err(Error::Shape(format!("h has length {}, expected {width}", h.len())));
    }
    let dropped = apply_dropout(params, h, mode);
    Ok(head_logits(params, &dropped).into_iter().map(sigmoid).collect())
}

fn apply_dropout(params: &ClassifierParams, h: &[f64], mode: Mode) -> Vec<f64> {
    match mode {
        Mode::Infer => h.to_vec(),
        Mode::Train { dropout_seed } => dropout_mask(h.len(), params.config.dropout, dropout_seed)
            .iter()
            .zip(h)
            .map(|(m, v)| m * v)
            .collect(),
    }
}

pub fn predict_probs(params: &ClassifierParams, m: &ContractMatrix) -> Result<Vec<f64>> {
    let h = bilstm_forward(params, m)?;
    classify(params, &h, Mode::Infer)
}

/// Per-sample loss `Σ_c FL(p_c, y_c)` and its gradient.
pub fn sample_loss_and_grad(
    params: &ClassifierParams,
    m: &ContractMatrix,
    labels: &[bool],
    focal: FocalParams,
    mode: Mode,
) -> Result<(f64, ClassifierParams)> {
    check_matrix(params, m)?;
    if labels.len() != params.config.classes {
        return Err(Error::Shape(format!("{} labels for {} classes", labels.len(), params.config.classes)));
    }
    let u = params.config.units;
    let trace = bilstm_trace(params, m);
    let h = [trace.fwd.h.as_slice(), trace.bwd.h.as_slice()].concat();
    let mask = match mode {
        Mode::Infer => vec![1.0; 2 * u],
        Mode::Train { dropout_seed } => dropout_mask(2 * u, params.config.dropout, dropout_seed),
    };
    let hd: Vec<f64> = h.iter().zip(&mask).map(|(a, b)| a * b).collect();
    let probs: Vec<f64> = head_logits(params, &hd).into_iter().map(sigmoid).collect();

    let mut g = params.zeros_like();
    let mut loss = 0.0;
    let mut dhd = vec![0.0; 2 * u];
    for (c, (&p, &y)) in probs.iter().zip(labels).enumerate() {
        loss += focal::focal_unchecked(p, y, focal);
        let dz = focal::focal_grad_logit(p, y, focal);
        g.head_b.data_mut()[c] += dz;
        for (gw, hv) in g.head_w.row_mut(c).iter_mut().zip(&hd) {
            *gw += dz * hv;
        }
        for (a, w) in dhd.iter_mut().zip(params.head_w.row(c)) {
            *a += dz * w;
        }
    }
    let dh: Vec<f64> = dhd.iter().zip(&mask).map(|(a, b)| a * b).collect();
    lstm::backward(&params.fwd, &m.rows, &trace.fwd, &dh[..u], &mut g.fwd);
    lstm::backward(&params.bwd, &m.rows, &trace.bwd, &dh[u..], &mut g.bwd);
    Ok((loss, g))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PredictionVector {
    pub probs: Vec<f64>,
    pub labels: IntentLabelVector,
    pub threshold: f64,
}

/// Bit c is set iff `probs[c] ≥ threshold`.
pub fn binarize(probs: &[f64], threshold: f64) -> IntentLabelVector {
    let mut bits = [false; NUM_CLASSES];
    for (b, &p) in bits.iter_mut().zip(probs) {
        *b = p >= threshold;
    }
    IntentLabelVector(bits)
}

pub fn predict(params: &ClassifierParams, m: &ContractMatrix, threshold: f64) -> Result<PredictionVector> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Config(format!("threshold {threshold} outside (0, 1)")));
    }
    let probs = predict_probs(params, m)?;
    Ok(PredictionVector {
        labels: binarize(&probs, threshold),
        probs,
        threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tiny(d: usize, u: usize) -> ClassifierConfig {
        ClassifierConfig {
            input_dim: d,
            units: u,
            classes: NUM_CLASSES,
            dropout: 0.5,
            l_cap: 16,
        }
    }

    #[test]
    fn padding_rule() {
        let e: Vec<Vec<f64>> = (0..3).map(|i| vec![i as f64 + 1.0; 4]).collect();
        let m = build_contract_matrix(&e, 16).unwrap();
        assert_eq!(m.valid(), 3);
        assert_eq!(m.capacity(), 16);
        assert!(m.rows().data()[3 * 4..].iter().all(|&v| v == 0.0));
        assert_eq!(m.rows().row(2), &[3.0; 4]);
    }

    #[test]
    fn truncation_keeps_head() {
        let e: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64; 2]).collect();
        let m = build_contract_matrix(&e, 16).unwrap();
        assert_eq!(m.valid(), 16);
        assert_eq!(m.rows().row(15), &[15.0, 15.0]);
    }

    #[test]
    fn zero_embedding_counts_as_valid() {
        let m = build_contract_matrix(&[vec![0.0; 3]], 4).unwrap();
        assert_eq!(m.valid(), 1);
        assert!(m.rows().data().iter().all(|&v| v == 0.0));
        assert!(build_contract_matrix(&[], 4).is_err());
        assert!(build_contract_matrix(&[vec![0.0; 3], vec![0.0; 2]], 4).is_err());
    }

    #[test]
    fn zero_params_fixed_point() {
        let p = ClassifierParams::zeros(&tiny(3, 2));
        let m = build_contract_matrix(&[vec![0.5, -1.0, 2.0], vec![1.0, 1.0, 1.0]], 4).unwrap();
        assert_eq!(bilstm_forward(&p, &m).unwrap(), vec![0.0; 4]);
    }

    /// Straight-line LSTM cell for one unit, written out term by term.
    fn cell(x: [f64; 2], h: f64, c: f64, wi: &[[f64; 4]; 2], wr: [f64; 4], b: [f64; 4]) -> (f64, f64) {
        let s = |z: f64| 1.0 / (1.0 + (-z).exp());
        let z: Vec<f64> = (0..4).map(|j| x[0] * wi[0][j] + x[1] * wi[1][j] + h * wr[j] + b[j]).collect();
        let (i, f, g, o) = (s(z[0]), s(z[1]), z[2].tanh(), s(z[3]));
        let c2 = f * c + i * g;
        (o * c2.tanh(), c2)
    }

    #[test]
    fn hand_unrolled_two_step() {
        let wi_f = [[0.1, -0.2, 0.3, 0.4], [0.5, 0.6, -0.7, 0.8]];
        let wr_f = [0.2, -0.1, 0.05, 0.3];
        let b_f = [0.0, 1.0, 0.1, -0.1];
        let wi_b = [[-0.3, 0.2, 0.1, -0.4], [0.25, -0.5, 0.6, 0.1]];
        let wr_b = [-0.2, 0.3, 0.4, -0.05];
        let b_b = [0.1, 0.9, -0.2, 0.0];
        let x = [[1.0, 2.0], [-0.5, 0.25]];

        let (h1, c1) = cell(x[0], 0.0, 0.0, &wi_f, wr_f, b_f);
        let (hf, _) = cell(x[1], h1, c1, &wi_f, wr_f, b_f);
        let (g1, d1) = cell(x[1], 0.0, 0.0, &wi_b, wr_b, b_b);
        let (hb, _) = cell(x[0], g1, d1, &wi_b, wr_b, b_b);

        let mut p = ClassifierParams::zeros(&tiny(2, 1));
        let flat = |w: &[[f64; 4]; 2]| w.iter().flatten().copied().collect::<Vec<_>>();
        p.fwd.w_in = Tensor::from_vec(&[2, 4], flat(&wi_f)).unwrap();
        p.fwd.w_rec = Tensor::from_vec(&[1, 4], wr_f.to_vec()).unwrap();
        p.fwd.bias = Tensor::from_vec(&[4], b_f.to_vec()).unwrap();
        p.bwd.w_in = Tensor::from_vec(&[2, 4], flat(&wi_b)).unwrap();
        p.bwd.w_rec = Tensor::from_vec(&[1, 4], wr_b.to_vec()).unwrap();
        p.bwd.bias = Tensor::from_vec(&[4], b_b.to_vec()).unwrap();
        let m = build_contract_matrix(&[x[0].to_vec(), x[1].to_vec()], 5).unwrap();
        let h = bilstm_forward(&p, &m).unwrap();
        assert!((h[0] - hf).abs() < 1e-14);
        assert!((h[1] - hb).abs() < 1e-14);
    }

    #[test]
    fn classify_head_cases() {
        let mut p = ClassifierParams::zeros(&tiny(3, 2));
        let h = vec![0.3, -0.4, 0.9, 0.1];
        assert_eq!(classify(&p, &h, Mode::Infer).unwrap(), vec![0.5; 10]);
        p.head_b.data_mut()[4] = 10.0;
        let probs = classify(&p, &h, Mode::Infer).unwrap();
        assert!((probs[4] - 0.999_954_602_131_297_6).abs() < 1e-12);
        assert!(classify(&p, &h[..3], Mode::Infer).is_err());
    }

    #[test]
    fn train_mode_dropout_matches_seeded_mask() {
        let mut p = ClassifierParams::zeros(&tiny(3, 8));
        // Head row 0 reads coordinate k through weight 1 at column k; use the
        // identity-like layout to read back the dropped vector directly.
        let h: Vec<f64> = (0..16).map(|k| 0.01 * (k as f64 + 1.0)).collect();
        let mask = dropout_mask(16, 0.5, 77);
        assert!(mask.iter().all(|&m| m == 0.0 || m == 2.0));
        assert!(mask.contains(&0.0) && mask.contains(&2.0));
        for k in 0..10 {
            p.head_w.row_mut(k).fill(0.0);
            p.head_w.row_mut(k)[k] = 1.0;
        }
        let probs = classify(&p, &h, Mode::Train { dropout_seed: 77 }).unwrap();
        for k in 0..10 {
            let expect = sigmoid(mask[k] * h[k]);
            assert_eq!(probs[k], expect);
        }
    }

    #[test]
    fn binarize_conventions() {
        assert_eq!(binarize(&[0.5; 10], 0.5), IntentLabelVector([true; 10]));
        let mut probs = [0.1; 10];
        probs[0] = 0.9;
        let mut want = [false; 10];
        want[0] = true;
        assert_eq!(binarize(&probs, 0.5), IntentLabelVector(want));
        assert_eq!(binarize(&[0.95; 10], 0.99), IntentLabelVector([false; 10]));
    }

    proptest! {
        #[test]
        fn padding_invariance(seed in any::<u64>(), n in 1usize..6, extra in 1usize..10) {
            let cfg = tiny(3, 2);
            let p = ClassifierParams::init(&cfg, seed).unwrap();
            let mut r = rng::seeded(seed ^ 1);
            let e: Vec<Vec<f64>> = (0..n).map(|_| (0..3).map(|_| r.random::<f64>() - 0.5).collect()).collect();
            let m = build_contract_matrix(&e, n).unwrap();
            let wide = m.with_capacity(n + extra);
            prop_assert_eq!(bilstm_forward(&p, &m).unwrap(), bilstm_forward(&p, &wide).unwrap());
        }

        #[test]
        fn binarize_depends_on_logit_sign(z in proptest::collection::vec(-8.0f64..8.0, 10), thr in 0.05f64..0.95) {
            let probs: Vec<f64> = z.iter().map(|&v| sigmoid(v)).collect();
            let cut = (thr / (1.0 - thr)).ln();
            let bits = binarize(&probs, thr);
            for (c, &zc) in z.iter().enumerate() {
                // Skip values within rounding distance of the cut.
                if (zc - cut).abs() > 1e-9 {
                    prop_assert_eq!(bits.0[c], zc > cut);
                }
            }
        }
    }
}
