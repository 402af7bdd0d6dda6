use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Confusion counts with `member` as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackMetrics {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// `None` when undefined (no positive predictions, or no positives).
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

impl AttackMetrics {
    pub fn from_counts(tp: usize, fp: usize, tn: usize, fn_: usize) -> Self {
        let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = match (precision, recall) {
            (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
            (Some(_), Some(_)) => Some(0.0),
            _ => None,
        };
        AttackMetrics {
            tp,
            fp,
            tn,
            fn_,
            precision,
            recall,
            f1,
        }
    }

    /// F1 with undefined values scored as zero, for averaging across runs.
    pub fn f1_or_zero(&self) -> f64 {
        self.f1.unwrap_or(0.0)
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.tp + self.fp + self.tn + self.fn_;
        (self.tp + self.tn) as f64 / total as f64
    }

    /// The attack beats random guessing.
    pub fn is_success(&self) -> bool {
        self.f1.is_some_and(|f| f > 0.5)
    }
}

/// `true` means member in both slices.
pub fn compute_metrics(predicted: &[bool], actual: &[bool]) -> Result<AttackMetrics> {
    if predicted.len() != actual.len() {
        return Err(Error::DimensionMismatch {
            what: "label vectors",
            expected: actual.len(),
            actual: predicted.len(),
        });
    }
    if predicted.is_empty() {
        return Err(Error::EmptyInput { what: "labels" });
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&p, &a) in predicted.iter().zip(actual) {
        match (p, a) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    Ok(AttackMetrics::from_counts(tp, fp, tn, fn_))
}

/// Macro-averaged F1 of a multi-class classifier; classes absent from both
/// predictions and truth are skipped.
pub fn macro_f1(predicted: &[usize], actual: &[usize], num_classes: usize) -> f64 {
    let mut total = 0.0;
    let mut counted = 0;
    for c in 0..num_classes {
        let pred: Vec<bool> = predicted.iter().map(|&p| p == c).collect();
        let act: Vec<bool> = actual.iter().map(|&a| a == c).collect();
        if !pred.iter().any(|&x| x) && !act.iter().any(|&x| x) {
            continue;
        }
        if let Ok(m) = compute_metrics(&pred, &act) {
            total += m.f1_or_zero();
            counted += 1;
        }
    }
    if counted == 0 {
        0.0
    } else {
        total / counted as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(tp: usize, fp: usize, tn: usize, fn_: usize) -> (Vec<bool>, Vec<bool>) {
        let mut p = Vec::new();
        let mut a = Vec::new();
        for (n, pv, av) in [(tp, true, true), (fp, true, false), (tn, false, false), (fn_, false, true)] {
            p.extend(std::iter::repeat(pv).take(n));
            a.extend(std::iter::repeat(av).take(n));
        }
        (p, a)
    }

    #[test]
    fn arithmetic_example() {
        let (p, a) = labels(3, 1, 5, 1);
        let m = compute_metrics(&p, &a).unwrap();
        assert_eq!((m.tp, m.fp, m.tn, m.fn_), (3, 1, 5, 1));
        assert_eq!(m.precision, Some(0.75));
        assert_eq!(m.recall, Some(0.75));
        assert!((m.f1.unwrap() - 0.75).abs() < 1e-15);
        assert!(m.is_success());
    }

    #[test]
    fn perfect_and_degenerate_cases() {
        let (p, a) = labels(4, 0, 4, 0);
        assert_eq!(compute_metrics(&p, &a).unwrap().f1, Some(1.0));

        // never predicts member: precision undefined
        let (p, a) = labels(0, 0, 5, 5);
        let m = compute_metrics(&p, &a).unwrap();
        assert_eq!(m.precision, None);
        assert_eq!(m.recall, Some(0.0));
        assert_eq!(m.f1, None);
        assert_eq!(m.f1_or_zero(), 0.0);
        assert!(!m.is_success());

        assert!(compute_metrics(&[true], &[true, false]).is_err());
        assert!(compute_metrics(&[], &[]).is_err());
    }

    #[test]
    fn f1_is_bounded_by_max_of_precision_and_recall() {
        for tp in 0..6 {
            for fp in 0..6 {
                for fn_ in 0..6 {
                    let m = AttackMetrics::from_counts(tp, fp, 3, fn_);
                    if let (Some(p), Some(r), Some(f)) = (m.precision, m.recall, m.f1) {
                        assert!(f <= p.max(r) + 1e-15);
                        assert!(f >= p.min(r) - 1e-15);
                    }
                }
            }
        }
    }

    #[test]
    fn serializes_fn_field() {
        let m = AttackMetrics::from_counts(1, 0, 1, 0);
        let v = serde_json::to_value(m).unwrap();
        assert_eq!(v["fn"], 0);
    }

    #[test]
    fn macro_f1_of_perfect_classifier() {
        assert_eq!(macro_f1(&[0, 1, 2, 1], &[0, 1, 2, 1], 4), 1.0);
        assert!(macro_f1(&[0, 0, 0], &[0, 1, 2], 3) < 1.0);
    }
}
