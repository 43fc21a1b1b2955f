//! Self-training pseudo-labelers with budgeted confidence thresholds.
//!
//! Both labelers take exactly `k` samples (fewer only when the pool is
//! smaller) and report the thresholds that the chosen samples satisfy.

use serde::{Deserialize, Serialize};

use crate::active::budget_k;
use crate::corpus::Label;
use crate::metrics::confidence;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SslStrategy {
    ST,
    AT,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SSLConfig {
    pub strategy: SslStrategy,
    pub budget_fraction: f64,
    #[serde(default = "default_share")]
    pub at_malware_share: f64,
}

fn default_share() -> f64 {
    0.8
}

impl SSLConfig {
    pub fn new(strategy: SslStrategy, budget_fraction: f64) -> Self {
        SSLConfig {
            strategy,
            budget_fraction,
            at_malware_share: default_share(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.budget_fraction) {
            return Err(format!("SSL budget {} not in [0, 1]", self.budget_fraction));
        }
        if !(0.0..=1.0).contains(&self.at_malware_share) {
            return Err(format!("AT malware share {} not in [0, 1]", self.at_malware_share));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Thresholds {
    /// Label 1 taken with `f ≥ gamma`, label 0 with `f ≤ 1 − gamma`.
    Symmetric { gamma: Option<f64> },
    /// Label 1 taken with `f ≥ gamma_pos`, label 0 with `f ≤ gamma_neg`.
    Asymmetric {
        gamma_pos: Option<f64>,
        gamma_neg: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelResult {
    /// `(pool index, pseudo-label)` in pick order; indices distinct.
    pub assignments: Vec<(usize, Label)>,
    pub thresholds: Thresholds,
    pub requested_k: usize,
    pub achieved_k: usize,
}

/// Pseudo-label `budget_k(|pool|, π)` samples of the pool.
pub fn pseudo_label(cfg: &SSLConfig, scores: &[f64]) -> PseudoLabelResult {
    let k = budget_k(scores.len(), cfg.budget_fraction);
    match cfg.strategy {
        SslStrategy::ST => pseudo_label_st(scores, k),
        SslStrategy::AT => pseudo_label_at(scores, k, cfg.at_malware_share),
    }
}

/// Symmetric thresholding: the `k` most confident samples, labeled by
/// `f ≥ 0.5`.
///
/// The reported `gamma` is rounded down where needed so that
/// `f ≤ 1 − gamma` holds in floating point for every goodware pick.
pub fn pseudo_label_st(scores: &[f64], k: usize) -> PseudoLabelResult {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    let conf: Vec<f64> = scores.iter().map(|&f| confidence(f)).collect();
    order.sort_by(|&a, &b| conf[b].total_cmp(&conf[a]).then(a.cmp(&b)));
    order.truncate(k.min(scores.len()));
    let mut gamma: Option<f64> = None;
    let assignments: Vec<(usize, Label)> = order
        .into_iter()
        .map(|i| {
            let f = scores[i];
            let label = Label::from_bool(f >= 0.5);
            let mut c = conf[i];
            if label == Label::Goodware {
                while 1.0 - c < f {
                    c = c.next_down();
                }
            }
            gamma = Some(gamma.map_or(c, |g: f64| g.min(c)));
            (i, label)
        })
        .collect();
    PseudoLabelResult {
        achieved_k: assignments.len(),
        requested_k: k,
        assignments,
        thresholds: Thresholds::Symmetric { gamma },
    }
}

/// Asymmetric thresholding: `floor(share·k)` highest-scored samples as
/// malware, then the lowest-scored remaining samples as goodware until `k`
/// are taken.
pub fn pseudo_label_at(scores: &[f64], k: usize, malware_share: f64) -> PseudoLabelResult {
    let n = scores.len();
    let k_pos = ((malware_share * k as f64).floor() as usize).min(k);
    let mut desc: Vec<usize> = (0..n).collect();
    desc.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut asc: Vec<usize> = (0..n).collect();
    asc.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));

    let mut taken = vec![false; n];
    let mut assignments = Vec::with_capacity(k.min(n));
    let mut gamma_pos = None;
    for &i in desc.iter().take(k_pos) {
        taken[i] = true;
        assignments.push((i, Label::Malware));
        gamma_pos = Some(scores[i]);
    }
    let mut gamma_neg = None;
    let mut need = k - k_pos;
    for &i in &asc {
        if need == 0 {
            break;
        }
        if taken[i] {
            continue;
        }
        taken[i] = true;
        assignments.push((i, Label::Goodware));
        gamma_neg = Some(scores[i]);
        need -= 1;
    }
    PseudoLabelResult {
        achieved_k: assignments.len(),
        requested_k: k,
        assignments,
        thresholds: Thresholds::Asymmetric { gamma_pos, gamma_neg },
    }
}
