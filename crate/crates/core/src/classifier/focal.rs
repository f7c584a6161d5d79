//! Binary focal loss and its batch reduction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probabilities are clamped to `[EPS, 1 − EPS]` before any logarithm.
pub const EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FocalParams {
    pub gamma: f64,
    pub alpha: f64,
}

impl Default for FocalParams {
    fn default() -> Self {
        FocalParams { gamma: 2.0, alpha: 0.25 }
    }
}

impl FocalParams {
    pub fn new(gamma: f64, alpha: f64) -> Result<Self> {
        let p = FocalParams { gamma, alpha };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.gamma.is_nan() || self.gamma < 0.0 {
            return Err(Error::Config(format!("gamma {} must be ≥ 0", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        Ok(())
    }
}

/// `−α·y·(1−p)^γ·ln p − (1−α)·(1−y)·p^γ·ln(1−p)`
pub fn focal_loss(p: f64, y: bool, gamma: f64, alpha: f64) -> Result<f64> {
    FocalParams { gamma, alpha }.validate()?;
    Ok(focal_unchecked(p, y, FocalParams { gamma, alpha }))
}

pub(crate) fn focal_unchecked(p: f64, y: bool, fp: FocalParams) -> f64 {
    let p = p.clamp(EPS, 1.0 - EPS);
    if y {
        -fp.alpha * (1.0 - p).powf(fp.gamma) * p.ln()
    } else {
        -(1.0 - fp.alpha) * p.powf(fp.gamma) * (1.0 - p).ln()
    }
}

/// ∂FL/∂z where `p = σ(z)`. Zero inside the clamp region, where the clamped
/// loss is flat in `z`.
pub(crate) fn focal_grad_logit(p: f64, y: bool, fp: FocalParams) -> f64 {
    if !(EPS..=1.0 - EPS).contains(&p) {
        return 0.0;
    }
    let FocalParams { gamma, alpha } = fp;
    if y {
        alpha * (1.0 - p).powf(gamma) * (gamma * p * p.ln() - (1.0 - p))
    } else {
        (1.0 - alpha) * p.powf(gamma) * (p - gamma * (1.0 - p) * (1.0 - p).ln())
    }
}

/// `(1/M) Σᵢ Σ_c FL(p_ic, y_ic)`: mean over samples, sum over classes.
pub fn batch_loss(probs: &[Vec<f64>], labels: &[Vec<bool>], gamma: f64, alpha: f64) -> Result<f64> {
    let fp = FocalParams::new(gamma, alpha)?;
    if probs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if probs.len() != labels.len() {
        return Err(Error::Shape(format!("{} prediction rows vs {} label rows", probs.len(), labels.len())));
    }
    let mut total = 0.0;
    for (p, y) in probs.iter().zip(labels) {
        if p.len() != y.len() {
            return Err(Error::Shape("prediction and label widths differ".into()));
        }
        total += p.iter().zip(y).map(|(&p, &y)| focal_unchecked(p, y, fp)).sum::<f64>();
    }
    Ok(total / probs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::sigmoid;
    use proptest::prelude::*;

    fn bce(p: f64, y: bool) -> f64 {
        let p = p.clamp(EPS, 1.0 - EPS);
        if y {
            -p.ln()
        } else {
            -(1.0 - p).ln()
        }
    }

    #[test]
    fn reduces_to_half_bce() {
        let v = focal_loss(0.5, true, 0.0, 0.5).unwrap();
        assert!((v - 0.5 * 2f64.ln()).abs() < 1e-15);
        assert!((v - 0.346_573_590_279_972_6).abs() < 1e-5);
    }

    #[test]
    fn perfect_prediction_is_free() {
        assert!(focal_loss(1.0, true, 2.0, 0.25).unwrap() < 1e-20);
        assert!(focal_loss(0.0, false, 2.0, 0.25).unwrap() < 1e-20);
    }

    #[test]
    fn reference_value() {
        // 0.25 · 0.1² · (−ln 0.9) = 0.0025 · 0.105360515657826...
        let v = focal_loss(0.9, true, 2.0, 0.25).unwrap();
        assert!((v - 2.634_012_891_445_6e-4).abs() < 1e-12, "{v}");
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(focal_loss(0.5, true, -0.1, 0.5).is_err());
        assert!(focal_loss(0.5, true, 2.0, 1.5).is_err());
    }

    #[test]
    fn batch_loss_cases() {
        let one = vec![vec![1.0, 0.0]];
        let y = vec![vec![true, false]];
        assert!(batch_loss(&one, &y, 2.0, 0.25).unwrap() < 1e-20);

        let row = vec![0.3, 0.8];
        let yrow = vec![true, false];
        let single = batch_loss(std::slice::from_ref(&row), std::slice::from_ref(&yrow), 2.0, 0.25).unwrap();
        let double = batch_loss(&[row.clone(), row], &[yrow.clone(), yrow], 2.0, 0.25).unwrap();
        assert!((single - double).abs() < 1e-15);

        // Direct per-term oracle for M = 2, C = 2.
        let probs = vec![vec![0.2, 0.7], vec![0.9, 0.4]];
        let labels = vec![vec![true, false], vec![false, true]];
        let (g, a) = (2.0f64, 0.25f64);
        let terms = [
            -a * (0.8f64).powf(g) * (0.2f64).ln(),
            -(1.0 - a) * (0.7f64).powf(g) * (0.3f64).ln(),
            -(1.0 - a) * (0.9f64).powf(g) * (0.1f64).ln(),
            -a * (0.6f64).powf(g) * (0.4f64).ln(),
        ];
        let oracle = terms.iter().sum::<f64>() / 2.0;
        assert!((batch_loss(&probs, &labels, g, a).unwrap() - oracle).abs() < 1e-15);

        assert!(matches!(batch_loss(&[], &[], 2.0, 0.25), Err(Error::EmptyDataset)));
        assert!(batch_loss(&probs, &labels[..1], 2.0, 0.25).is_err());
    }

    #[test]
    fn logit_gradient_matches_difference_quotient() {
        for &(z, y, g, a) in &[(0.3, true, 2.0, 0.25), (-1.2, false, 2.0, 0.25), (2.5, true, 0.0, 0.5), (0.0, false, 1.5, 0.7)] {
            let fp = FocalParams { gamma: g, alpha: a };
            let h = 1e-6;
            let fd = (focal_unchecked(sigmoid(z + h), y, fp) - focal_unchecked(sigmoid(z - h), y, fp)) / (2.0 * h);
            let an = focal_grad_logit(sigmoid(z), y, fp);
            assert!((fd - an).abs() < 1e-8, "z={z} y={y}: {fd} vs {an}");
        }
    }

    proptest! {
        #[test]
        fn half_bce_identity(p in 0.0f64..=1.0, y in any::<bool>()) {
            let fl = focal_loss(p, y, 0.0, 0.5).unwrap();
            prop_assert!((fl - 0.5 * bce(p, y)).abs() <= 1e-12);
        }

        #[test]
        fn monotone_in_p(p in 0.01f64..0.98, dp in 0.001f64..0.01, g in 0.0f64..4.0, a in 0.01f64..0.99) {
            let q = p + dp;
            prop_assert!(focal_loss(q, true, g, a).unwrap() < focal_loss(p, true, g, a).unwrap());
            prop_assert!(focal_loss(q, false, g, a).unwrap() > focal_loss(p, false, g, a).unwrap());
        }

        #[test]
        fn nonnegative(p in 0.0f64..=1.0, y in any::<bool>(), g in 0.0f64..5.0, a in 0.0f64..=1.0) {
            prop_assert!(focal_loss(p, y, g, a).unwrap() >= 0.0);
        }
    }
}
