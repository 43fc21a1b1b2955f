//! Seeded synthetic temporal streams with binary Bernoulli features.
//!
//! Each feature has an activation rate per class. A drift event `(t, j)`
//! swaps the two rates of feature `j` from period `t` onward, reversing its
//! class association. Every draw is keyed by `(seed, period, sample,
//! feature)` so generation is reproducible and order-independent.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Batch, Granularity, Label, Sample, SparseVector, TemporalStream};
use crate::error::{Error, Result};
use crate::seed::{self, tag};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureRates {
    pub p_mal: f64,
    pub p_good: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DriftEvent {
    pub period: usize,
    pub feature: usize,
}

/// Width of one synthetic period in timestamp units.
pub const PERIOD_SECONDS: i64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    /// Feature count.
    pub d: usize,
    /// Number of periods including the training period (`T + 1`).
    pub periods: usize,
    pub samples_per_batch: usize,
    /// Malware prior per period; a single entry is broadcast to all periods.
    pub malware_prior: Vec<f64>,
    pub features: Vec<FeatureRates>,
    #[serde(default)]
    pub drift_events: Vec<DriftEvent>,
    pub seed: u64,
}

impl SynthConfig {
    /// The shipped drift scenario: `T = 10`, 2,000 samples per batch,
    /// `d = 50`, 9:1 goodware/malware.
    ///
    /// - features 0..10: goodware-indicative, association flips at `t = 4`;
    /// - features 10..20: stable malware-indicative;
    /// - features 20..50: uninformative background activity.
    pub fn shipped_default() -> Self {
        let mut features = Vec::with_capacity(50);
        features.extend(std::iter::repeat_n(FeatureRates { p_mal: 0.10, p_good: 0.35 }, 10));
        features.extend(std::iter::repeat_n(FeatureRates { p_mal: 0.65, p_good: 0.20 }, 10));
        features.extend(std::iter::repeat_n(FeatureRates { p_mal: 0.20, p_good: 0.20 }, 30));
        SynthConfig {
            d: 50,
            periods: 11,
            samples_per_batch: 2000,
            malware_prior: vec![0.1],
            features,
            drift_events: (0..10).map(|feature| DriftEvent { period: 4, feature }).collect(),
            seed: 42,
        }
    }

    /// `T`, the number of incoming batches.
    pub fn steps(&self) -> usize {
        self.periods.saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("synth config: {m}")));
        if self.d == 0 {
            return bad("d must be positive".into());
        }
        if self.periods == 0 {
            return bad("periods must be at least 1".into());
        }
        if self.samples_per_batch == 0 {
            return bad("samples_per_batch must be positive".into());
        }
        if self.features.len() != self.d {
            return bad(format!("{} feature rate entries for d = {}", self.features.len(), self.d));
        }
        if self.malware_prior.len() != 1 && self.malware_prior.len() != self.periods {
            return bad(format!(
                "malware_prior has {} entries; expected 1 or {}",
                self.malware_prior.len(),
                self.periods
            ));
        }
        for (t, &p) in self.malware_prior.iter().enumerate() {
            if !(p > 0.0 && p < 1.0) {
                return bad(format!("malware prior {p} at period {t} not in (0, 1)"));
            }
        }
        for (j, r) in self.features.iter().enumerate() {
            for p in [r.p_mal, r.p_good] {
                if !(0.0..=1.0).contains(&p) {
                    return bad(format!("feature {j} rate {p} not in [0, 1]"));
                }
            }
        }
        for e in &self.drift_events {
            if e.period < 1 || e.period > self.steps() {
                return bad(format!("drift period {} not in [1, {}]", e.period, self.steps()));
            }
            if e.feature >= self.d {
                return bad(format!("drift feature {} out of range", e.feature));
            }
        }
        Ok(())
    }

    pub fn prior(&self, t: usize) -> f64 {
        if self.malware_prior.len() == 1 {
            self.malware_prior[0]
        } else {
            self.malware_prior[t]
        }
    }

    /// Effective rates of feature `j` at period `t`, with every drift event
    /// at or before `t` applied.
    pub fn rates_at(&self, t: usize, j: usize) -> FeatureRates {
        let swaps = self
            .drift_events
            .iter()
            .filter(|e| e.feature == j && e.period <= t)
            .count();
        let r = self.features[j];
        if swaps % 2 == 1 {
            FeatureRates {
                p_mal: r.p_good,
                p_good: r.p_mal,
            }
        } else {
            r
        }
    }

    /// Read a config from TOML or JSON, chosen by file extension.
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: SynthConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| Error::format(path, e))?
        } else {
            toml::from_str(&text).map_err(|e| Error::format(path, e))?
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Draw the full labeled stream. Labels of incoming batches are present in
/// the stream; consumers only see them through the oracle and evaluation.
pub fn generate_stream(cfg: &SynthConfig) -> Result<TemporalStream> {
    cfg.validate()?;
    let mut batches: Vec<Batch> = (0..cfg.periods)
        .into_par_iter()
        .map(|t| generate_batch(cfg, t))
        .collect();
    let incoming = batches.split_off(1);
    Ok(TemporalStream {
        dim: cfg.d,
        granularity: Granularity::SyntheticStep,
        initial: batches.pop().expect("at least one period"),
        incoming,
        feature_map: None,
    })
}

fn generate_batch(cfg: &SynthConfig, t: usize) -> Batch {
    let rates: Vec<FeatureRates> = (0..cfg.d).map(|j| cfg.rates_at(t, j)).collect();
    let prior = cfg.prior(t);
    let start_ts = t as i64 * PERIOD_SECONDS;
    let n = cfg.samples_per_batch;
    let samples = (0..n)
        .map(|i| {
            let (tt, ii) = (t as u64, i as u64);
            let malware = seed::uniform(cfg.seed, &[tag::SYNTH_LABEL, tt, ii]) < prior;
            let entries = rates.iter().enumerate().filter_map(|(j, r)| {
                let p = if malware { r.p_mal } else { r.p_good };
                let u = seed::uniform(cfg.seed, &[tag::SYNTH_FEATURE, tt, ii, j as u64]);
                (u < p).then_some((j, 1.0))
            });
            Sample {
                id: format!("p{t:03}-{i:06}"),
                x: SparseVector::new(cfg.d, entries).expect("generated indices are ascending"),
                timestamp: start_ts + (i as i64 * PERIOD_SECONDS) / n as i64,
                true_label: Some(Label::from_bool(malware)),
            }
        })
        .collect();
    Batch {
        period: t,
        start_ts,
        end_ts: start_ts + PERIOD_SECONDS - 1,
        samples,
    }
}

/// Population AUC of a Bernoulli feature with the given class rates: the
/// probability a random malware value exceeds a random goodware value,
/// ties counted as one half.
pub fn bernoulli_auc(r: FeatureRates) -> f64 {
    r.p_mal * (1.0 - r.p_good) + 0.5 * (r.p_mal * r.p_good + (1.0 - r.p_mal) * (1.0 - r.p_good))
}

/// Analytic class association of feature `j` at period `t`:
/// `(sign(2·AUC − 1), AUC)`, with direction 0 when the rates coincide.
pub fn expected_association(cfg: &SynthConfig, t: usize, j: usize) -> (i8, f64) {
    let r = cfg.rates_at(t, j);
    let auc = bernoulli_auc(r);
    let dir = if r.p_mal == r.p_good {
        0
    } else if r.p_mal > r.p_good {
        1
    } else {
        -1
    };
    (dir, auc)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(rates: Vec<FeatureRates>, periods: usize, n: usize) -> SynthConfig {
        SynthConfig {
            d: rates.len(),
            periods,
            samples_per_batch: n,
            malware_prior: vec![0.5],
            features: rates,
            drift_events: vec![],
            seed: 7,
        }
    }

    #[test]
    fn zero_steps_gives_training_batch_only() {
        let cfg = small(vec![FeatureRates { p_mal: 0.5, p_good: 0.5 }], 1, 10);
        let s = generate_stream(&cfg).unwrap();
        assert_eq!(s.steps(), 0);
        assert_eq!(s.initial.len(), 10);
        s.validate().unwrap();
    }

    #[test]
    fn deterministic_rates_tie_feature_to_label() {
        let cfg = small(
            vec![FeatureRates { p_mal: 1.0, p_good: 0.0 }, FeatureRates { p_mal: 0.3, p_good: 0.6 }],
            4,
            300,
        );
        let s = generate_stream(&cfg).unwrap();
        for b in s.batches() {
            for smp in &b.samples {
                assert_eq!(smp.x.get(0) == 1.0, smp.true_label == Some(Label::Malware));
            }
        }
    }

    #[test]
    fn identical_config_gives_identical_stream() {
        let cfg = small(vec![FeatureRates { p_mal: 0.4, p_good: 0.2 }; 5], 3, 200);
        assert_eq!(generate_stream(&cfg).unwrap(), generate_stream(&cfg).unwrap());
        let mut other = cfg.clone();
        other.seed += 1;
        assert_ne!(generate_stream(&cfg).unwrap(), generate_stream(&other).unwrap());
    }

    #[test]
    fn closed_form_auc() {
        let auc = bernoulli_auc(FeatureRates { p_mal: 0.9, p_good: 0.1 });
        assert!((auc - 0.90).abs() < 1e-12);
        let cfg = small(vec![FeatureRates { p_mal: 0.5, p_good: 0.5 }], 2, 1);
        assert_eq!(expected_association(&cfg, 0, 0), (0, 0.5));
    }

    #[test]
    fn closed_form_auc_agrees_with_monte_carlo() {
        // Monte-Carlo over 10^5 independent (malware, goodware) value pairs.
        let (pm, pg) = (0.9, 0.1);
        let n = 100_000u64;
        let mut acc = 0.0;
        for i in 0..n {
            let a = (seed::uniform(3, &[0, i]) < pm) as u8;
            let b = (seed::uniform(3, &[1, i]) < pg) as u8;
            acc += match a.cmp(&b) {
                std::cmp::Ordering::Greater => 1.0,
                std::cmp::Ordering::Equal => 0.5,
                std::cmp::Ordering::Less => 0.0,
            };
        }
        let mc = acc / n as f64;
        assert!((mc - 0.90).abs() < 0.005, "{mc}");
    }

    #[test]
    fn drift_event_flips_direction_from_its_period() {
        let mut cfg = small(vec![FeatureRates { p_mal: 0.8, p_good: 0.3 }; 2], 6, 1);
        cfg.drift_events = vec![DriftEvent { period: 3, feature: 1 }];
        assert_eq!(expected_association(&cfg, 2, 1).0, 1);
        assert_eq!(expected_association(&cfg, 3, 1).0, -1);
        assert_eq!(expected_association(&cfg, 5, 1).0, -1);
        assert_eq!(expected_association(&cfg, 5, 0).0, 1);
        let (_, a2) = expected_association(&cfg, 2, 1);
        let (_, a3) = expected_association(&cfg, 3, 1);
        assert!((a2 + a3 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn validation_rejects_bad_configs() {
        let base = small(vec![FeatureRates { p_mal: 0.5, p_good: 0.5 }], 3, 5);
        let mut c = base.clone();
        c.features[0].p_mal = 1.5;
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.malware_prior = vec![0.0];
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.drift_events = vec![DriftEvent { period: 0, feature: 0 }];
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.drift_events = vec![DriftEvent { period: 3, feature: 0 }];
        assert!(c.validate().is_err());
        let mut c = base;
        c.malware_prior = vec![0.5, 0.5];
        assert!(c.validate().is_err());
    }

    #[test]
    fn shipped_default_is_valid() {
        let cfg = SynthConfig::shipped_default();
        cfg.validate().unwrap();
        assert_eq!(cfg.steps(), 10);
        assert_eq!(cfg.drift_events.len(), 10);
    }
}
