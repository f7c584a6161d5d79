//! Per-class confusion counts, derived metrics and macro/micro aggregates.
//!
//! Precision, recall and F1 are 0 whenever their denominator is 0. Raw
//! counts travel with every report so other conventions can be recomputed.

use serde::{Deserialize, Serialize};

use crate::dataset::{Intent, IntentLabelVector, NUM_CLASSES};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ClassCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub n: u64,
    pub classes: Vec<ClassCounts>,
}

impl ConfusionCounts {
    pub fn summed(&self) -> ClassCounts {
        self.classes.iter().fold(ClassCounts::default(), |a, c| ClassCounts {
            tp: a.tp + c.tp,
            tn: a.tn + c.tn,
            fp: a.fp + c.fp,
            fn_: a.fn_ + c.fn_,
        })
    }
}

/// Counts over rows of any common width.
pub fn confusion_bits<P: AsRef<[bool]>, T: AsRef<[bool]>>(preds: &[P], truths: &[T]) -> Result<ConfusionCounts> {
    if preds.len() != truths.len() {
        return Err(Error::Shape(format!("{} predictions vs {} truths", preds.len(), truths.len())));
    }
    let first = truths.first().ok_or(Error::EmptyDataset)?;
    let width = first.as_ref().len();
    let mut classes = vec![ClassCounts::default(); width];
    for (p, t) in preds.iter().zip(truths) {
        let (p, t) = (p.as_ref(), t.as_ref());
        if p.len() != width || t.len() != width {
            return Err(Error::Shape("label rows of unequal width".into()));
        }
        for (k, (&pk, &tk)) in classes.iter_mut().zip(p.iter().zip(t)) {
            match (pk, tk) {
                (true, true) => k.tp += 1,
                (false, false) => k.tn += 1,
                (true, false) => k.fp += 1,
                (false, true) => k.fn_ += 1,
            }
        }
    }
    Ok(ConfusionCounts {
        n: preds.len() as u64,
        classes,
    })
}

pub fn confusion(preds: &[IntentLabelVector], truths: &[IntentLabelVector]) -> Result<ConfusionCounts> {
    let p: Vec<&[bool]> = preds.iter().map(|v| &v.0[..]).collect();
    let t: Vec<&[bool]> = truths.iter().map(|v| &v.0[..]).collect();
    confusion_bits(&p, &t)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Metrics of one count set, with `n` samples per class.
pub fn metrics_of(c: &ClassCounts, n: u64) -> Metrics {
    Metrics {
        accuracy: ratio(c.tp + c.tn, n),
        precision: ratio(c.tp, c.tp + c.fp),
        recall: ratio(c.tp, c.tp + c.fn_),
        f1: ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
    }
}

pub fn per_class(counts: &ConfusionCounts) -> Vec<Metrics> {
    counts.classes.iter().map(|c| metrics_of(c, counts.n)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    #[serde(rename = "macro")]
    pub macro_avg: Metrics,
    pub micro: Metrics,
}

/// Macro: unweighted mean of the per-class values. Micro: the same formulas
/// on counts summed over classes, with `C·N` as the accuracy denominator.
pub fn aggregate(counts: &ConfusionCounts) -> Aggregates {
    let pc = per_class(counts);
    let k = pc.len() as f64;
    let mean = |f: fn(&Metrics) -> f64| pc.iter().map(f).sum::<f64>() / k;
    let macro_avg = Metrics {
        accuracy: mean(|m| m.accuracy),
        precision: mean(|m| m.precision),
        recall: mean(|m| m.recall),
        f1: mean(|m| m.f1),
    };
    let micro = metrics_of(&counts.summed(), counts.n * counts.classes.len() as u64);
    Aggregates { macro_avg, micro }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class: String,
    pub counts: ClassCounts,
    pub metrics: Metrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub n: u64,
    pub threshold: f64,
    /// Value assigned to a metric whose denominator is zero.
    pub zero_division: f64,
    pub classes: Vec<ClassReport>,
    #[serde(rename = "macro")]
    pub macro_avg: Metrics,
    pub micro: Metrics,
    pub micro_counts: ClassCounts,
}

fn class_name(c: usize, width: usize) -> String {
    if width == NUM_CLASSES {
        Intent::ALL[c].name().to_string()
    } else {
        format!("class{c}")
    }
}

impl MetricReport {
    pub fn new(counts: &ConfusionCounts, threshold: f64) -> Self {
        let width = counts.classes.len();
        let classes = counts
            .classes
            .iter()
            .zip(per_class(counts))
            .enumerate()
            .map(|(c, (k, m))| ClassReport {
                class: class_name(c, width),
                counts: *k,
                metrics: m,
            })
            .collect();
        let agg = aggregate(counts);
        MetricReport {
            n: counts.n,
            threshold,
            zero_division: 0.0,
            classes,
            macro_avg: agg.macro_avg,
            micro: agg.micro,
            micro_counts: counts.summed(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// One row per class, then `macro` and `micro`. The macro row leaves the
    /// count columns empty.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["class", "accuracy", "precision", "recall", "f1", "tp", "tn", "fp", "fn"])?;
        let row = |name: &str, m: &Metrics, c: Option<&ClassCounts>| -> Vec<String> {
            let mut r = vec![
                name.to_string(),
                m.accuracy.to_string(),
                m.precision.to_string(),
                m.recall.to_string(),
                m.f1.to_string(),
            ];
            match c {
                Some(c) => r.extend([c.tp, c.tn, c.fp, c.fn_].map(|v| v.to_string())),
                None => r.extend(std::iter::repeat_n(String::new(), 4)),
            }
            r
        };
        for c in &self.classes {
            w.write_record(row(&c.class, &c.metrics, Some(&c.counts)))?;
        }
        w.write_record(row("macro", &self.macro_avg, None))?;
        w.write_record(row("micro", &self.micro, Some(&self.micro_counts)))?;
        let bytes = w.into_inner().map_err(|e| Error::Shape(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn formula_arithmetic() {
        let c = ClassCounts { tp: 3, tn: 5, fp: 1, fn_: 1 };
        let m = metrics_of(&c, 10);
        assert_eq!(m.precision, 0.75);
        assert_eq!(m.recall, 0.75);
        assert_eq!(m.f1, 0.75);
        assert_eq!(m.accuracy, 0.8);
    }

    #[test]
    fn degenerate_denominators() {
        let none = ClassCounts { tp: 0, tn: 4, fp: 0, fn_: 0 };
        let m = metrics_of(&none, 4);
        assert_eq!((m.precision, m.recall, m.f1, m.accuracy), (0.0, 0.0, 0.0, 1.0));
        let perfect = ClassCounts { tp: 4, tn: 0, fp: 0, fn_: 0 };
        let m = metrics_of(&perfect, 4);
        assert_eq!((m.precision, m.recall, m.f1, m.accuracy), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn perfect_and_complement() {
        let truths: Vec<IntentLabelVector> = (0..5u32)
            .map(|i| IntentLabelVector(std::array::from_fn(|c| (i + c as u32).is_multiple_of(3))))
            .collect();
        let c = confusion(&truths, &truths).unwrap();
        assert!(c.classes.iter().all(|k| k.fp == 0 && k.fn_ == 0));
        let comp: Vec<IntentLabelVector> = truths.iter().map(|t| IntentLabelVector(t.0.map(|b| !b))).collect();
        let c = confusion(&comp, &truths).unwrap();
        assert!(c.classes.iter().all(|k| k.tp == 0 && k.tn == 0));
    }

    #[test]
    fn hand_built_four_samples() {
        // Class 0 over four samples: (p,t) = (1,1), (1,0), (0,1), (0,0).
        let preds = [vec![true], vec![true], vec![false], vec![false]];
        let truths = [vec![true], vec![false], vec![true], vec![false]];
        let c = confusion_bits(&preds, &truths).unwrap();
        assert_eq!(c.classes[0], ClassCounts { tp: 1, tn: 1, fp: 1, fn_: 1 });
        assert!(confusion_bits(&preds[..3], &truths).is_err());
        assert!(confusion_bits::<Vec<bool>, Vec<bool>>(&[], &[]).is_err());
    }

    #[test]
    fn single_class_macro_equals_micro() {
        let preds = [vec![true], vec![true], vec![false]];
        let truths = [vec![true], vec![false], vec![true]];
        let a = aggregate(&confusion_bits(&preds, &truths).unwrap());
        assert_eq!(a.macro_avg, a.micro);
    }

    #[test]
    fn two_class_micro_f1_is_harmonic_mean() {
        let preds = [vec![true, true], vec![true, false], vec![false, false], vec![true, true]];
        let truths = [vec![true, false], vec![true, false], vec![true, true], vec![false, true]];
        let a = aggregate(&confusion_bits(&preds, &truths).unwrap());
        let (p, r) = (a.micro.precision, a.micro.recall);
        assert!((a.micro.f1 - 2.0 * p * r / (p + r)).abs() < 1e-15);
    }

    #[test]
    fn csv_layout() {
        let t = vec![IntentLabelVector::from_intents(&[Intent::Fee])];
        let r = MetricReport::new(&confusion(&t, &t).unwrap(), 0.5);
        let csv = r.to_csv().unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "class,accuracy,precision,recall,f1,tp,tn,fp,fn");
        assert_eq!(lines[1], "Fee,1,1,1,1,1,0,0,0");
        assert_eq!(lines[2], "DisableTrading,1,0,0,0,0,1,0,0");
        assert_eq!(lines[11], "macro,1,0.1,0.1,0.1,,,,");
        assert_eq!(lines[12], "micro,1,1,1,1,1,9,0,0");
        let json: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(json["classes"][0]["counts"]["fn"], 0);
        assert_eq!(json["macro"]["accuracy"], 1.0);
    }

    fn rows(n: usize) -> impl Strategy<Value = Vec<IntentLabelVector>> {
        proptest::collection::vec(any::<[bool; NUM_CLASSES]>().prop_map(IntentLabelVector), n)
    }

    proptest! {
        #[test]
        fn conservation_and_identities((p, t) in (1usize..30).prop_flat_map(|n| (rows(n), rows(n)))) {
            let c = confusion(&p, &t).unwrap();
            prop_assert!(c.classes.iter().all(|k| k.total() == c.n));
            let a = aggregate(&c);
            prop_assert!((a.macro_avg.accuracy - a.micro.accuracy).abs() < 1e-12);
            let (mp, mr) = (a.micro.precision, a.micro.recall);
            if mp + mr > 0.0 {
                prop_assert!((a.micro.f1 - 2.0 * mp * mr / (mp + mr)).abs() < 1e-12);
            }
            for m in per_class(&c).iter().chain([&a.macro_avg, &a.micro]) {
                for v in [m.accuracy, m.precision, m.recall, m.f1] {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
            }
        }

        #[test]
        fn reorder_invariant((p, t) in (1usize..20).prop_flat_map(|n| (rows(n), rows(n))), rot in 0usize..20) {
            let k = rot % p.len();
            let mut p2 = p.clone();
            let mut t2 = t.clone();
            p2.rotate_left(k);
            t2.rotate_left(k);
            prop_assert_eq!(confusion(&p, &t).unwrap(), confusion(&p2, &t2).unwrap());
        }
    }
}
