//! Binary classification metrics with Ransomware (class 1) as the positive
//! class.

use std::cmp::Ordering;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::{Scalar, RANSOMWARE};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("predicted has {predicted} entries, actual has {actual}")]
    LengthMismatch { predicted: usize, actual: usize },
    #[error("nothing to evaluate")]
    Empty,
    #[error("ROC needs both classes; only class {0} present")]
    SingleClass(u8),
    #[error("label {0} is not 0 or 1")]
    BadLabel(u8),
    #[error("score at position {0} is not finite")]
    NonFinite(usize),
}

pub type Result<T> = std::result::Result<T, EvalError>;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        Self { tp, fp, fn_, tn }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

fn check_labels(labels: &[u8]) -> Result<()> {
    match labels.iter().find(|&&l| l > 1) {
        Some(&l) => Err(EvalError::BadLabel(l)),
        None => Ok(()),
    }
}

pub fn confusion(predicted: &[u8], actual: &[u8]) -> Result<ConfusionMatrix> {
    if predicted.len() != actual.len() {
        return Err(EvalError::LengthMismatch {
            predicted: predicted.len(),
            actual: actual.len(),
        });
    }
    if predicted.is_empty() {
        return Err(EvalError::Empty);
    }
    check_labels(predicted)?;
    check_labels(actual)?;
    let mut cm = ConfusionMatrix::default();
    for (&p, &a) in predicted.iter().zip(actual) {
        match (p == RANSOMWARE, a == RANSOMWARE) {
            (true, true) => cm.tp += 1,
            (true, false) => cm.fp += 1,
            (false, true) => cm.fn_ += 1,
            (false, false) => cm.tn += 1,
        }
    }
    Ok(cm)
}

/// Ratio that had a zero denominator and was reported as 0.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricFlag {
    PrecisionUndefined,
    RecallUndefined,
    F1Undefined,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<MetricFlag>,
}

pub fn metrics(cm: &ConfusionMatrix) -> Result<Metrics> {
    let total = cm.total();
    if total == 0 {
        return Err(EvalError::Empty);
    }
    let mut flags = Vec::new();
    let mut ratio = |num: u64, den: u64, flag| {
        if den == 0 {
            flags.push(flag);
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let precision = ratio(cm.tp, cm.tp + cm.fp, MetricFlag::PrecisionUndefined);
    let recall = ratio(cm.tp, cm.tp + cm.fn_, MetricFlag::RecallUndefined);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        flags.push(MetricFlag::F1Undefined);
        0.0
    };
    Ok(Metrics {
        accuracy: (cm.tp + cm.tn) as f64 / total as f64,
        precision,
        recall,
        f1,
        flags,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocCurve<T> {
    /// `(fpr, tpr)` from `(0, 0)` to `(1, 1)`.
    pub points: Vec<(T, T)>,
    pub auc: T,
}

/// ROC by a descending threshold sweep over the distinct scores; tied scores
/// enter together. AUC is the trapezoidal area, accumulated in integer
/// counts so it equals the pairwise concordance probability (ties 1/2).
pub fn roc_auc<T: Scalar>(scores: &[T], actual: &[u8]) -> Result<RocCurve<T>> {
    if scores.len() != actual.len() {
        return Err(EvalError::LengthMismatch {
            predicted: scores.len(),
            actual: actual.len(),
        });
    }
    if scores.is_empty() {
        return Err(EvalError::Empty);
    }
    check_labels(actual)?;
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(EvalError::NonFinite(i));
    }
    let pos = actual.iter().filter(|&&l| l == RANSOMWARE).count() as u64;
    let neg = actual.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(EvalError::SingleClass(actual[0]));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal));

    let (p, n) = (T::of(pos as f64), T::of(neg as f64));
    let mut points = vec![(T::zero(), T::zero())];
    let (mut tp, mut fp) = (0u64, 0u64);
    // twice the area, in units of 1 / (pos * neg)
    let mut area2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let (tp0, fp0) = (tp, fp);
        while i < order.len() && scores[order[i]] == s {
            if actual[order[i]] == RANSOMWARE {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        area2 += (fp - fp0) as u128 * (tp0 + tp) as u128;
        points.push((T::of(fp as f64) / n, T::of(tp as f64) / p));
    }
    let auc = (area2 as f64) / (2.0 * pos as f64 * neg as f64);
    Ok(RocCurve {
        points,
        auc: T::of(auc),
    })
}

/// Everything `evaluate` writes for one scored test set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_samples: usize,
    pub threshold: f64,
    pub confusion: ConfusionMatrix,
    pub metrics: Metrics,
    pub roc: Vec<[f64; 2]>,
    pub auc: Option<f64>,
    #[serde(default)]
    pub flags: Vec<String>,
}

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Predicts Ransomware when `P(Ransomware) > threshold`. A single-class set
/// yields a flagged report without ROC.
pub fn evaluate_scores(scores: &[f64], actual: &[u8], threshold: f64) -> Result<EvalReport> {
    let predicted: Vec<u8> = scores.iter().map(|&s| u8::from(s > threshold)).collect();
    let cm = confusion(&predicted, actual)?;
    let m = metrics(&cm)?;
    let mut flags: Vec<String> = m
        .flags
        .iter()
        .map(|f| serde_json::to_value(f).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default())
        .collect();
    let (roc, auc) = match roc_auc(scores, actual) {
        Ok(c) => (c.points.iter().map(|&(x, y)| [x, y]).collect(), Some(c.auc)),
        Err(EvalError::SingleClass(c)) => {
            flags.push(format!("single_class_{c}"));
            (Vec::new(), None)
        }
        Err(e) => return Err(e),
    };
    Ok(EvalReport {
        n_samples: scores.len(),
        threshold,
        confusion: cm,
        metrics: m,
        roc,
        auc,
        flags,
    })
}

pub fn write_roc_csv<W: Write>(points: &[[f64; 2]], writer: W) -> std::result::Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["fpr", "tpr"])?;
    for p in points {
        w.write_record([p[0].to_string(), p[1].to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn expand(cm: ConfusionMatrix) -> (Vec<u8>, Vec<u8>) {
        let mut p = Vec::new();
        let mut a = Vec::new();
        for (n, pv, av) in [(cm.tp, 1, 1), (cm.fp, 1, 0), (cm.fn_, 0, 1), (cm.tn, 0, 0)] {
            for _ in 0..n {
                p.push(pv);
                a.push(av);
            }
        }
        (p, a)
    }

    /// Brute-force pairwise concordance, ties 1/2.
    fn concordance(scores: &[f64], labels: &[u8]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (i, &si) in scores.iter().enumerate() {
            for (j, &sj) in scores.iter().enumerate() {
                if labels[i] == 1 && labels[j] == 0 {
                    den += 1.0;
                    if si > sj {
                        num += 1.0;
                    } else if si == sj {
                        num += 0.5;
                    }
                }
            }
        }
        num / den
    }

    #[test]
    fn confusion_counts_reported_matrices() {
        for cm in [
            ConfusionMatrix::new(134, 8, 49, 59),
            ConfusionMatrix::new(146, 37, 15, 52),
        ] {
            let (p, a) = expand(cm);
            assert_eq!(confusion(&p, &a).unwrap(), cm);
        }
        let all = [1, 0, 1, 1, 0];
        let cm = confusion(&all, &all).unwrap();
        assert_eq!((cm.fp, cm.fn_), (0, 0));
    }

    #[test]
    fn confusion_length_mismatch() {
        assert!(matches!(confusion(&[1, 0], &[1]), Err(EvalError::LengthMismatch { .. })));
        assert_eq!(confusion(&[], &[]), Err(EvalError::Empty));
    }

    #[test]
    fn deberta_matrix_metrics() {
        let m = metrics(&ConfusionMatrix::new(134, 8, 49, 59)).unwrap();
        assert_eq!(m.accuracy, 193.0 / 250.0);
        assert!((m.accuracy - 0.772).abs() < 1e-12);
        assert!((m.precision - 134.0 / 142.0).abs() < 1e-12);
        assert!((m.precision - 0.9437).abs() < 1e-4);
        assert!((m.recall - 0.7322).abs() < 1e-4);
        let p = m.precision;
        let r = m.recall;
        assert!((m.f1 - 2.0 * p * r / (p + r)).abs() < 1e-15);
        assert!(m.flags.is_empty());
    }

    #[test]
    fn degenerate_precision_is_flagged() {
        let m = metrics(&ConfusionMatrix::new(0, 0, 3, 2)).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
        assert!(m.flags.contains(&MetricFlag::PrecisionUndefined));
        assert!(m.flags.contains(&MetricFlag::F1Undefined));
        assert_eq!(metrics(&ConfusionMatrix::default()), Err(EvalError::Empty));
    }

    #[test]
    fn auc_examples() {
        let c = roc_auc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap();
        assert_eq!(c.auc, 1.0);
        let c = roc_auc(&[0.5; 6], &[0, 1, 0, 1, 1, 0]).unwrap();
        assert_eq!(c.auc, 0.5);
        assert_eq!(c.points, vec![(0.0, 0.0), (1.0, 1.0)]);
        let s = [0.1, 0.4, 0.35, 0.8];
        let l = [0, 0, 1, 1];
        let c = roc_auc(&s, &l).unwrap();
        assert_eq!(concordance(&s, &l), 0.75);
        assert_eq!(c.auc, 0.75);
        assert_eq!(roc_auc(&[0.3, 0.4], &[1, 1]).unwrap_err(), EvalError::SingleClass(1));
    }

    #[test]
    fn auc_in_f32() {
        let c = roc_auc(&[0.1f32, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap();
        assert_eq!(c.auc, 0.75f32);
    }

    #[test]
    fn single_class_report_is_flagged() {
        let r = evaluate_scores(&[0.9, 0.8], &[1, 1], DEFAULT_THRESHOLD).unwrap();
        assert!(r.auc.is_none());
        assert!(r.roc.is_empty());
        assert!(r.flags.iter().any(|f| f == "single_class_1"));
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"fn\":0"));
    }

    proptest! {
        #[test]
        fn trapezoid_equals_concordance(
            data in proptest::collection::vec((0u8..20, 0u8..2), 2..200),
        ) {
            let scores: Vec<f64> = data.iter().map(|(s, _)| *s as f64 / 20.0).collect();
            let labels: Vec<u8> = data.iter().map(|(_, l)| *l).collect();
            prop_assume!(labels.contains(&0) && labels.contains(&1));
            let c = roc_auc(&scores, &labels).unwrap();
            prop_assert!((c.auc - concordance(&scores, &labels)).abs() < 1e-12);
            prop_assert_eq!(c.points.first().copied(), Some((0.0, 0.0)));
            prop_assert_eq!(c.points.last().copied(), Some((1.0, 1.0)));
            for w in c.points.windows(2) {
                prop_assert!(w[0].0 <= w[1].0 && w[0].1 <= w[1].1);
            }
            // strictly increasing transform leaves the curve unchanged
            let warped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp()).collect();
            prop_assert_eq!(roc_auc(&warped, &labels).unwrap(), c);
        }

        #[test]
        fn metrics_ignore_sample_order(
            mut pairs in proptest::collection::vec((0u8..2, 0u8..2), 1..100),
            rot in 0usize..100,
        ) {
            let (p, a): (Vec<u8>, Vec<u8>) = pairs.iter().copied().unzip();
            let m1 = metrics(&confusion(&p, &a).unwrap()).unwrap();
            let k = rot % pairs.len();
            pairs.rotate_left(k);
            pairs.reverse();
            let (p, a): (Vec<u8>, Vec<u8>) = pairs.into_iter().unzip();
            prop_assert_eq!(m1, metrics(&confusion(&p, &a).unwrap()).unwrap());
        }
    }
}
