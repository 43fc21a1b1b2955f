//! Binary classification metrics under the strict decision rule
//! `ŷ = I[f(x) > τ]`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Label;
use crate::detector::threshold_at_fpr;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("scores and labels differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    Empty,
    #[error("non-finite score at position {0}")]
    NonFinite(usize),
    #[error("no goodware samples to set the FPR threshold")]
    NoGoodware,
    #[error("average precision needs at least one positive")]
    NoPositives,
    #[error("probability {0} outside [0, 1]")]
    OutOfRange(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn n_mal(&self) -> usize {
        self.tp + self.fn_
    }

    pub fn n_good(&self) -> usize {
        self.fp + self.tn
    }

    /// `tp / (tp + fn)`, missing without positives.
    pub fn recall(&self) -> Option<f64> {
        (self.n_mal() > 0).then(|| self.tp as f64 / self.n_mal() as f64)
    }

    /// Harmonic mean of precision and recall, missing without positives
    /// and 0 when nothing is detected.
    pub fn f1(&self) -> Option<f64> {
        if self.n_mal() == 0 {
            return None;
        }
        if self.tp == 0 {
            return Some(0.0);
        }
        let precision = self.tp as f64 / (self.tp + self.fp) as f64;
        let recall = self.tp as f64 / self.n_mal() as f64;
        Some(2.0 * precision * recall / (precision + recall))
    }
}

fn check_inputs(scores: &[f64], labels: &[Label]) -> Result<(), MetricsError> {
    if scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch(scores.len(), labels.len()));
    }
    if scores.is_empty() {
        return Err(MetricsError::Empty);
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(MetricsError::NonFinite(i));
    }
    Ok(())
}

pub fn confusion(scores: &[f64], labels: &[Label], tau: f64) -> Result<Confusion, MetricsError> {
    check_inputs(scores, labels)?;
    let mut c = Confusion::default();
    for (&s, &y) in scores.iter().zip(labels) {
        match (s > tau, y) {
            (true, Label::Malware) => c.tp += 1,
            (true, Label::Goodware) => c.fp += 1,
            (false, Label::Goodware) => c.tn += 1,
            (false, Label::Malware) => c.fn_ += 1,
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AtFpr {
    pub tau: f64,
    pub confusion: Confusion,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

/// Recall and F1 at the threshold whose goodware FPR is at most
/// `fpr_target` (set on this batch's own goodware scores).
pub fn f1_recall_at_fpr(scores: &[f64], labels: &[Label], fpr_target: f64) -> Result<AtFpr, MetricsError> {
    check_inputs(scores, labels)?;
    let good: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, y)| **y == Label::Goodware)
        .map(|(s, _)| *s)
        .collect();
    if good.is_empty() {
        return Err(MetricsError::NoGoodware);
    }
    let tau = threshold_at_fpr(&good, fpr_target).expect("non-empty goodware and finite scores");
    let c = confusion(scores, labels, tau)?;
    Ok(AtFpr {
        tau,
        confusion: c,
        recall: c.recall(),
        f1: c.f1(),
    })
}

/// Step-interpolated average precision over the descending-score ranking,
/// ties broken by ascending position.
pub fn average_precision(scores: &[f64], labels: &[Label]) -> Result<f64, MetricsError> {
    check_inputs(scores, labels)?;
    let n_pos = labels.iter().filter(|y| y.is_malware()).count();
    if n_pos == 0 {
        return Err(MetricsError::NoPositives);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut hits = 0usize;
    let mut acc = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i].is_malware() {
            hits += 1;
            acc += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(acc / n_pos as f64)
}

/// Base-2 binary entropy with `0·log 0 = 0`.
pub fn binary_entropy(p: f64) -> Result<f64, MetricsError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(MetricsError::OutOfRange(p));
    }
    Ok(entropy_unchecked(p))
}

pub(crate) fn entropy_unchecked(p: f64) -> f64 {
    let h = |q: f64| if q > 0.0 { -q * q.log2() } else { 0.0 };
    // Evaluate on the confidence side so H(p) == H(1 − p) bit for bit.
    let c = confidence(p);
    h(c) + h(1.0 - c)
}

/// Prediction confidence `max(f, 1 − f)`.
///
/// Symmetric bit for bit: `confidence(f) == confidence(1 − f)`. The
/// uncertainty strategies, the entropy and the symmetric pseudo-labeler
/// all rank on this single quantity.
pub fn confidence(f: f64) -> f64 {
    if f >= 0.5 {
        f
    } else {
        1.0 - f
    }
}

/// Per-period evaluation record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub period: usize,
    pub n: usize,
    pub n_mal: usize,
    pub n_good: usize,
    pub tau: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    /// Missing for batches without malware.
    pub ap: Option<f64>,
}

impl EvalRecord {
    pub fn evaluate(period: usize, scores: &[f64], labels: &[Label], fpr_target: f64) -> Result<Self, MetricsError> {
        let at = f1_recall_at_fpr(scores, labels, fpr_target)?;
        let c = at.confusion;
        let ap = match average_precision(scores, labels) {
            Ok(v) => Some(v),
            Err(MetricsError::NoPositives) => None,
            Err(e) => return Err(e),
        };
        Ok(EvalRecord {
            period,
            n: c.total(),
            n_mal: c.n_mal(),
            n_good: c.n_good(),
            tau: at.tau,
            tp: c.tp,
            fp: c.fp,
            tn: c.tn,
            fn_: c.fn_,
            recall: at.recall,
            f1: at.f1,
            ap,
        })
    }

    pub fn confusion(&self) -> Confusion {
        Confusion {
            tp: self.tp,
            fp: self.fp,
            tn: self.tn,
            fn_: self.fn_,
        }
    }
}

/// Mean over the present values; `None` when every value is missing.
pub fn mean_present(values: impl IntoIterator<Item = Option<f64>>) -> Option<f64> {
    let (sum, n) = values
        .into_iter()
        .flatten()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use Label::{Goodware as G, Malware as M};

    #[test]
    fn confusion_examples() {
        let c = confusion(&[0.9, 0.2], &[M, G], 0.5).unwrap();
        assert_eq!(c, Confusion { tp: 1, fp: 0, tn: 1, fn_: 0 });
        let c = confusion(&[0.9, 0.2, 0.7], &[M, G, G], 1.0).unwrap();
        assert_eq!(c, Confusion { tp: 0, fp: 0, tn: 2, fn_: 1 });
        let c = confusion(&[0.5], &[M], 0.5).unwrap();
        assert_eq!(c.fn_, 1);
    }

    #[test]
    fn confusion_errors() {
        assert_eq!(confusion(&[0.1], &[M, G], 0.5), Err(MetricsError::LengthMismatch(1, 2)));
        assert_eq!(confusion(&[], &[], 0.5), Err(MetricsError::Empty));
        assert_eq!(confusion(&[f64::NAN], &[M], 0.5), Err(MetricsError::NonFinite(0)));
    }

    #[test]
    fn f1_from_counts() {
        let c = Confusion { tp: 8, fp: 1, tn: 50, fn_: 2 };
        // precision 8/9, recall 0.8 → 2·(8/9)·0.8 / (8/9 + 0.8) = 16/19.
        assert!((c.f1().unwrap() - 16.0 / 19.0).abs() < 1e-12);
        assert!((c.f1().unwrap() - 0.8421).abs() < 1e-4);
        assert_eq!(c.recall(), Some(0.8));
        let none = Confusion { tp: 0, fp: 3, tn: 5, fn_: 0 };
        assert_eq!(none.f1(), None);
        let miss = Confusion { tp: 0, fp: 0, tn: 5, fn_: 2 };
        assert_eq!(miss.f1(), Some(0.0));
    }

    #[test]
    fn perfect_separation_at_fpr() {
        let scores = [0.1, 0.2, 0.3, 0.8, 0.9];
        let labels = [G, G, G, M, M];
        let at = f1_recall_at_fpr(&scores, &labels, 0.01).unwrap();
        assert_eq!(at.recall, Some(1.0));
        assert_eq!(at.f1, Some(1.0));
        assert_eq!(at.tau, 0.3);
    }

    #[test]
    fn zero_malware_batch_is_missing() {
        let r = EvalRecord::evaluate(3, &[0.1, 0.6], &[G, G], 0.01).unwrap();
        assert_eq!(r.recall, None);
        assert_eq!(r.f1, None);
        assert_eq!(r.ap, None);
        assert_eq!(r.n_mal, 0);
        assert_eq!(f1_recall_at_fpr(&[0.3], &[M], 0.01).unwrap_err(), MetricsError::NoGoodware);
    }

    #[test]
    fn average_precision_examples() {
        assert_eq!(average_precision(&[0.9, 0.8, 0.2, 0.1], &[M, M, G, G]).unwrap(), 1.0);
        let ap = average_precision(&[0.9, 0.8, 0.7, 0.6, 0.1], &[G, G, G, G, M]).unwrap();
        assert!((ap - 0.2).abs() < 1e-15);
        let ap = average_precision(&[0.9, 0.8, 0.7], &[M, G, M]).unwrap();
        assert!((ap - 5.0 / 6.0).abs() < 1e-15);
        // Ties rank earlier positions first.
        let ap = average_precision(&[0.5, 0.5], &[G, M]).unwrap();
        assert_eq!(ap, 0.5);
        assert_eq!(average_precision(&[0.5], &[G]), Err(MetricsError::NoPositives));
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(binary_entropy(0.5).unwrap(), 1.0);
        assert_eq!(binary_entropy(0.0).unwrap(), 0.0);
        assert_eq!(binary_entropy(1.0).unwrap(), 0.0);
        let h = -0.9f64 * 0.9f64.log2() - 0.1 * 0.1f64.log2();
        assert!((binary_entropy(0.9).unwrap() - h).abs() < 1e-12);
        assert!((binary_entropy(0.9).unwrap() - 0.4690).abs() < 1e-4);
        assert!(binary_entropy(1.1).is_err());
        assert!(binary_entropy(-0.1).is_err());
    }

    #[test]
    fn record_recomputes_from_its_counts() {
        let scores = [0.1, 0.4, 0.35, 0.8, 0.7, 0.2];
        let labels = [G, M, G, M, G, M];
        let r = EvalRecord::evaluate(1, &scores, &labels, 0.34).unwrap();
        let json = serde_json::to_string(&r).unwrap();
        let back: EvalRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.confusion().f1(), r.f1);
        assert_eq!(back.confusion().recall(), r.recall);
        assert_eq!(r.tp + r.fn_, r.n_mal);
        assert_eq!(r.fp + r.tn, r.n_good);
    }

    proptest! {
        #[test]
        fn entropy_is_symmetric(p in 0.0f64..=1.0) {
            prop_assert_eq!(binary_entropy(p).unwrap(), binary_entropy(1.0 - p).unwrap());
        }

        #[test]
        fn confidence_is_symmetric(f in 0.0f64..=1.0) {
            let c = confidence(f);
            prop_assert!(c >= 0.5);
            prop_assert_eq!(c, confidence(1.0 - f));
        }

        #[test]
        fn ap_invariant_under_monotone_transform(
            pairs in proptest::collection::vec((0.0f64..1.0, any::<bool>()), 1..60)
        ) {
            let scores: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let labels: Vec<Label> = pairs.iter().map(|p| Label::from_bool(p.1)).collect();
            prop_assume!(labels.iter().any(|l| l.is_malware()));
            let t: Vec<f64> = scores.iter().map(|s| (3.0 * s - 1.0).exp()).collect();
            prop_assert_eq!(average_precision(&scores, &labels).unwrap(), average_precision(&t, &labels).unwrap());
        }

        #[test]
        fn confusion_sums_to_n(
            pairs in proptest::collection::vec((0.0f64..1.0, any::<bool>()), 1..60),
            tau in 0.0f64..1.0,
        ) {
            let scores: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let labels: Vec<Label> = pairs.iter().map(|p| Label::from_bool(p.1)).collect();
            prop_assert_eq!(confusion(&scores, &labels, tau).unwrap().total(), scores.len());
        }
    }
}
