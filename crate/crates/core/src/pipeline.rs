//! Prequential retraining loop over a temporal stream.
//!
//! Each step `t = 1..=T` first evaluates the current model on batch `t`
//! using the withheld labels, then (per policy) queries oracle labels,
//! pseudo-labels the rest of the batch, applies the history policy and
//! retrains once on what is retained. Combined AL and SSL adds an
//! intermediate retrain so the pseudo-labeler sees the oracle labels.
//! Every label that enters a training set is recorded in an audit log
//! after that step's evaluation.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::active::{self, budget_k, ALConfig, QueryInput};
use crate::corpus::{Label, Sample, SparseVector, TemporalStream};
use crate::detector::{self, BatchScorer, DetectorModel, TrainConfig};
use crate::driftstat::{self, StabilityCounts};
use crate::error::{Error, Result};
use crate::metrics::{EvalRecord, MetricsError};
use crate::seed::{self, tag};
use crate::semisup::{self, SSLConfig, Thresholds};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Policy {
    #[serde(rename = "NR")]
    Nr,
    #[serde(rename = "FL")]
    Fl,
    #[serde(rename = "AL_ONLY")]
    AlOnly,
    #[serde(rename = "SSL_ONLY")]
    SslOnly,
    #[serde(rename = "AL_SSL")]
    AlSsl,
}

impl Policy {
    pub fn name(self) -> &'static str {
        match self {
            Policy::Nr => "NR",
            Policy::Fl => "FL",
            Policy::AlOnly => "AL_ONLY",
            Policy::SslOnly => "SSL_ONLY",
            Policy::AlSsl => "AL_SSL",
        }
    }

    pub fn uses_al(self) -> bool {
        matches!(self, Policy::AlOnly | Policy::AlSsl)
    }

    pub fn uses_ssl(self) -> bool {
        matches!(self, Policy::SslOnly | Policy::AlSsl)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum History {
    #[default]
    Full,
    /// Keep entries acquired in the most recent `n` periods.
    Window(usize),
}

fn default_fpr() -> f64 {
    0.01
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub policy: Policy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub al: Option<ALConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ssl: Option<SSLConfig>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_fpr")]
    pub fpr_target: f64,
    #[serde(default)]
    pub history: History,
    #[serde(default)]
    pub seed: u64,
    /// Fit Platt scaling on the training set after every retrain.
    #[serde(default)]
    pub calibrate: bool,
    /// Record β per step in the step log.
    #[serde(default = "default_true")]
    pub track_beta: bool,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

fn default_alpha() -> f64 {
    driftstat::DEFAULT_ALPHA
}

impl ExperimentConfig {
    pub fn new(policy: Policy) -> Self {
        ExperimentConfig {
            policy,
            al: None,
            ssl: None,
            train: TrainConfig::default(),
            fpr_target: default_fpr(),
            history: History::Full,
            seed: 0,
            calibrate: false,
            track_beta: true,
            alpha: default_alpha(),
        }
    }

    pub fn with_al(mut self, al: ALConfig) -> Self {
        self.al = Some(al);
        self
    }

    pub fn with_ssl(mut self, ssl: SSLConfig) -> Self {
        self.ssl = Some(ssl);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.policy.uses_al() != self.al.is_some() {
            return bad(format!("policy {} {} an AL config", self.policy.name(), if self.policy.uses_al() { "needs" } else { "takes no" }));
        }
        if self.policy.uses_ssl() != self.ssl.is_some() {
            return bad(format!("policy {} {} an SSL config", self.policy.name(), if self.policy.uses_ssl() { "needs" } else { "takes no" }));
        }
        if let Some(al) = &self.al {
            al.validate()?;
        }
        if let Some(ssl) = &self.ssl {
            ssl.validate().map_err(Error::Config)?;
        }
        self.train.validate()?;
        if !(self.fpr_target > 0.0 && self.fpr_target <= 1.0) {
            return bad(format!("fpr_target {} not in (0, 1]", self.fpr_target));
        }
        if self.history == History::Window(0) {
            return bad("history window must be at least 1".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha {} not in (0, 1)", self.alpha));
        }
        Ok(())
    }

    /// Short human-readable label, e.g. `AL_SSL-BADGE-0.10-ST-0.20`.
    pub fn label(&self) -> String {
        let mut s = self.policy.name().to_string();
        if let Some(al) = &self.al {
            s.push_str(&format!("-{}-{:.2}", al.strategy.name(), al.budget_fraction));
        }
        if let Some(ssl) = &self.ssl {
            s.push_str(&format!("-{:?}-{:.2}", ssl.strategy, ssl.budget_fraction));
        }
        if let History::Window(w) = self.history {
            s.push_str(&format!("-w{w}"));
        }
        s
    }
}

/// Position of a sample in the stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SampleRef {
    pub period: usize,
    pub index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Initial,
    Oracle,
    Pseudo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledEntry {
    pub sample: SampleRef,
    pub id: String,
    pub label: Label,
    pub provenance: Provenance,
    pub acquired_at: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Evaluate,
    OracleQuery,
    Train,
    PseudoLabel,
}

/// One entry of the audit log. `batch` is the period whose samples (or, for
/// `Train`, the newest period whose labels) the event touches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEvent {
    pub seq: u64,
    pub step: usize,
    pub kind: EventKind,
    pub batch: usize,
    pub count: usize,
}

#[derive(Debug, Default)]
pub struct AuditLog {
    pub events: Vec<AuditEvent>,
}

impl AuditLog {
    fn push(&mut self, step: usize, kind: EventKind, batch: usize, count: usize) {
        let seq = self.events.len() as u64;
        self.events.push(AuditEvent { seq, step, kind, batch, count });
    }
}

/// The only reader of withheld labels on incoming batches besides
/// evaluation.
pub struct Oracle<'a> {
    stream: &'a TemporalStream,
    queries: usize,
}

impl<'a> Oracle<'a> {
    pub fn new(stream: &'a TemporalStream) -> Self {
        Oracle { stream, queries: 0 }
    }

    pub fn queries(&self) -> usize {
        self.queries
    }

    pub fn label(&mut self, r: SampleRef) -> Result<Label> {
        let s = sample(self.stream, r);
        self.queries += 1;
        s.true_label
            .ok_or_else(|| Error::Oracle(format!("sample {} has no withheld label", s.id)))
    }
}

fn sample(stream: &TemporalStream, r: SampleRef) -> &Sample {
    &stream.batch(r.period).samples[r.index]
}

/// Training pairs for `entries`, in entry order.
pub fn training_pairs<'s>(stream: &'s TemporalStream, entries: &[LabeledEntry]) -> Vec<(&'s SparseVector, Label)> {
    entries.iter().map(|e| (&sample(stream, e.sample).x, e.label)).collect()
}

/// Full history is the identity; `Window(w)` after step `t` keeps entries
/// with `acquired_at ≥ t − w + 1`.
pub fn apply_history(d: Vec<LabeledEntry>, policy: History, t: usize) -> Vec<LabeledEntry> {
    match policy {
        History::Full => d,
        History::Window(w) => {
            let oldest = (t + 1).saturating_sub(w);
            d.into_iter().filter(|e| e.acquired_at >= oldest).collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub t: usize,
    pub config: String,
    pub policy: Policy,
    /// Missing when the batch holds no goodware.
    pub eval: Option<EvalRecord>,
    pub n_unlabeled: usize,
    pub n_train: usize,
    pub al_k: usize,
    pub n_al: usize,
    pub ssl_requested: usize,
    pub n_ssl: usize,
    pub ssl_thresholds: Option<Thresholds>,
    pub oracle_total: usize,
    pub pseudo_total: usize,
    pub n_next: usize,
    pub beta: Option<f64>,
    pub beta_counts: Option<StabilityCounts>,
    /// Fingerprint of the model evaluated at this step.
    pub checkpoint: String,
    pub al_selected: Vec<usize>,
    pub ssl_selected: Vec<usize>,
}

impl StepLog {
    pub fn f1(&self) -> Option<f64> {
        self.eval.as_ref().and_then(|e| e.f1)
    }

    pub fn recall(&self) -> Option<f64> {
        self.eval.as_ref().and_then(|e| e.recall)
    }
}

/// Wall-clock timings, kept apart from [`StepLog`] so logs stay
/// reproducible.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepTiming {
    pub t: usize,
    pub al_seconds: f64,
    pub train_seconds: f64,
}

pub struct StepOutput {
    pub next_set: Vec<LabeledEntry>,
    pub next_model: DetectorModel,
    pub log: StepLog,
    pub timing: StepTiming,
}

fn step_seed(seed: u64, t: usize) -> u64 {
    seed::derive(seed, &[tag::STEP, t as u64])
}

fn fit(stream: &TemporalStream, d: &[LabeledEntry], cfg: &ExperimentConfig, seed_t: u64) -> Result<DetectorModel> {
    let train_cfg = TrainConfig {
        seed: seed_t,
        ..cfg.train.clone()
    };
    let pairs = training_pairs(stream, d);
    let mut model = detector::train(&pairs, &train_cfg)?;
    if cfg.calibrate {
        model.calibrate(&pairs)?;
    }
    Ok(model)
}

/// Model trained on the initial labeled set.
pub fn initial_model(stream: &TemporalStream, cfg: &ExperimentConfig) -> Result<(Vec<LabeledEntry>, DetectorModel)> {
    let d: Vec<LabeledEntry> = stream
        .initial
        .samples
        .iter()
        .enumerate()
        .map(|(index, s)| LabeledEntry {
            sample: SampleRef { period: 0, index },
            id: s.id.clone(),
            label: s.true_label.expect("validated stream labels period 0"),
            provenance: Provenance::Initial,
            acquired_at: 0,
        })
        .collect();
    let model = fit(stream, &d, cfg, step_seed(cfg.seed, 0))?;
    Ok((d, model))
}

/// One prequential update on batch `t`.
#[allow(clippy::too_many_arguments)]
pub fn update_step(
    stream: &TemporalStream,
    t: usize,
    model: &DetectorModel,
    d: &[LabeledEntry],
    cfg: &ExperimentConfig,
    oracle: &mut Oracle<'_>,
    audit: &mut AuditLog,
    totals: (usize, usize),
) -> Result<StepOutput> {
    let batch = stream.batch(t);
    let n = batch.len();
    let seed_t = step_seed(cfg.seed, t);
    let view = batch.unlabeled();
    let refs = |i: usize| SampleRef { period: t, index: i };

    // (1) Evaluate before anything from this batch is used.
    let scores = model.score_batch(view)?;
    let labels: Vec<Label> = batch
        .samples
        .iter()
        .map(|s| {
            s.true_label
                .ok_or_else(|| Error::Oracle(format!("sample {} has no withheld label for evaluation", s.id)))
        })
        .collect::<Result<_>>()?;
    audit.push(t, EventKind::Evaluate, t, n);
    let eval = match EvalRecord::evaluate(t, &scores, &labels, cfg.fpr_target) {
        Ok(e) => Some(e),
        Err(MetricsError::NoGoodware) => None,
        Err(e) => return Err(e.into()),
    };
    let stability = if cfg.track_beta {
        let test: Vec<(&SparseVector, Label)> = batch.samples.iter().zip(&labels).map(|(s, y)| (&s.x, *y)).collect();
        driftstat::step_stability(t, &training_pairs(stream, d), &test, cfg.alpha, false)?.stability
    } else {
        None
    };

    let mut next: Vec<LabeledEntry> = d.to_vec();
    let mut al_selected = Vec::new();
    let mut ssl_selected = Vec::new();
    let mut ssl_requested = 0;
    let mut ssl_thresholds = None;
    let mut al_k = 0;
    let mut al_seconds = 0.0;
    let mut train_seconds = 0.0;
    let mut next_model = model.clone();

    let acquire = |next: &mut Vec<LabeledEntry>, idx: &[usize], oracle: &mut Oracle<'_>| -> Result<()> {
        for &i in idx {
            let label = oracle.label(refs(i))?;
            next.push(LabeledEntry {
                sample: refs(i),
                id: batch.samples[i].id.clone(),
                label,
                provenance: Provenance::Oracle,
                acquired_at: t,
            });
        }
        Ok(())
    };
    let retrain = |next: &[LabeledEntry], audit: &mut AuditLog, secs: &mut f64| -> Result<DetectorModel> {
        let started = Instant::now();
        let m = fit(stream, next, cfg, seed_t)?;
        *secs += started.elapsed().as_secs_f64();
        audit.push(t, EventKind::Train, t, next.len());
        Ok(m)
    };

    match cfg.policy {
        Policy::Nr => {}
        Policy::Fl => {
            al_selected = (0..n).collect();
            al_k = n;
            audit.push(t, EventKind::OracleQuery, t, n);
            acquire(&mut next, &al_selected, oracle)?;
        }
        Policy::AlOnly | Policy::AlSsl | Policy::SslOnly => {
            // (2) AL query and oracle labels.
            if let Some(al) = &cfg.al {
                let started = Instant::now();
                let al_cfg = ALConfig {
                    seed: seed::derive(seed_t, &[tag::ACTIVE]),
                    ..al.clone()
                };
                let pool = view.all_features();
                let labeled = training_pairs(stream, d);
                let sel = active::select(
                    &al_cfg,
                    QueryInput {
                        pool: &pool,
                        scores: &scores,
                        labeled: &labeled,
                        train: &cfg.train,
                    },
                )?;
                al_seconds = started.elapsed().as_secs_f64();
                al_k = budget_k(n, al.budget_fraction);
                al_selected = sel.selected;
                audit.push(t, EventKind::OracleQuery, t, al_selected.len());
                acquire(&mut next, &al_selected, oracle)?;
            }
            // (3)–(4) intermediate retrain, then pseudo-label the rest of
            // the batch. Without AL the current model does the labeling.
            if let Some(ssl) = &cfg.ssl {
                let intermediate;
                let labeler = if cfg.al.is_some() {
                    intermediate = retrain(&next, audit, &mut train_seconds)?;
                    &intermediate
                } else {
                    model
                };
                let mut in_al = vec![false; n];
                for &i in &al_selected {
                    in_al[i] = true;
                }
                let rest: Vec<usize> = (0..n).filter(|&i| !in_al[i]).collect();
                let rest_x: Vec<&SparseVector> = rest.iter().map(|&i| &batch.samples[i].x).collect();
                let rest_scores = if cfg.al.is_some() {
                    labeler.score_all(&rest_x)?
                } else {
                    rest.iter().map(|&i| scores[i]).collect()
                };
                let r = semisup::pseudo_label(ssl, &rest_scores);
                ssl_requested = r.requested_k;
                ssl_thresholds = Some(r.thresholds.clone());
                audit.push(t, EventKind::PseudoLabel, t, r.achieved_k);
                for (j, label) in r.assignments {
                    let i = rest[j];
                    ssl_selected.push(i);
                    next.push(LabeledEntry {
                        sample: refs(i),
                        id: batch.samples[i].id.clone(),
                        label,
                        provenance: Provenance::Pseudo,
                        acquired_at: t,
                    });
                }
            }
        }
    }

    // (5)–(6) History policy, then the final retrain on the retained set.
    let next = apply_history(next, cfg.history, t);
    if cfg.policy != Policy::Nr {
        next_model = retrain(&next, audit, &mut train_seconds)?;
    }

    let log = StepLog {
        t,
        config: cfg.label(),
        policy: cfg.policy,
        eval,
        n_unlabeled: n,
        n_train: d.len(),
        al_k,
        n_al: al_selected.len(),
        ssl_requested,
        n_ssl: ssl_selected.len(),
        ssl_thresholds,
        oracle_total: totals.0 + al_selected.len(),
        pseudo_total: totals.1 + ssl_selected.len(),
        n_next: next.len(),
        beta: stability.map(|s| s.beta),
        beta_counts: stability.map(|s| s.counts),
        checkpoint: model.fingerprint(),
        al_selected,
        ssl_selected,
    };
    Ok(StepOutput {
        next_set: next,
        next_model,
        log,
        timing: StepTiming {
            t,
            al_seconds,
            train_seconds,
        },
    })
}

pub struct ExperimentRun {
    pub logs: Vec<StepLog>,
    pub timings: Vec<StepTiming>,
    /// `models[t − 1]` is the model evaluated at step `t`.
    pub models: Vec<DetectorModel>,
    /// `training_sets[t − 1]` is the set that model was trained on.
    pub training_sets: Vec<Vec<LabeledEntry>>,
    pub audit: Vec<AuditEvent>,
    /// Model after the last step.
    pub final_model: DetectorModel,
}

/// Run all `T` steps of the experiment.
pub fn run_experiment(stream: &TemporalStream, cfg: &ExperimentConfig) -> Result<ExperimentRun> {
    cfg.validate()?;
    stream.validate()?;
    let (mut d, mut model) = initial_model(stream, cfg)?;
    let mut oracle = Oracle::new(stream);
    let mut audit = AuditLog::default();
    audit.push(0, EventKind::Train, 0, d.len());
    let mut run = ExperimentRun {
        logs: Vec::with_capacity(stream.steps()),
        timings: Vec::with_capacity(stream.steps()),
        models: Vec::with_capacity(stream.steps()),
        training_sets: Vec::with_capacity(stream.steps()),
        audit: Vec::new(),
        final_model: model.clone(),
    };
    let mut totals = (0, 0);
    for t in 1..=stream.steps() {
        let out = update_step(stream, t, &model, &d, cfg, &mut oracle, &mut audit, totals)?;
        totals = (out.log.oracle_total, out.log.pseudo_total);
        run.models.push(model);
        run.training_sets.push(d);
        run.logs.push(out.log);
        run.timings.push(out.timing);
        d = out.next_set;
        model = out.next_model;
    }
    run.final_model = model;
    run.audit = audit.events;
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::active::Strategy;
    use crate::semisup::SslStrategy;
    use crate::synthdrift::{generate_stream, FeatureRates, SynthConfig};
    use std::collections::HashSet;

    fn small_stream(drift: bool) -> TemporalStream {
        let mut features = vec![FeatureRates { p_mal: 0.8, p_good: 0.1 }; 4];
        features.extend(vec![FeatureRates { p_mal: 0.3, p_good: 0.3 }; 4]);
        let cfg = SynthConfig {
            d: 8,
            periods: 5,
            samples_per_batch: 200,
            malware_prior: vec![0.3],
            features,
            drift_events: if drift {
                vec![crate::synthdrift::DriftEvent { period: 2, feature: 0 }]
            } else {
                Vec::new()
            },
            seed: 7,
        };
        generate_stream(&cfg).unwrap()
    }

    fn fast(mut c: ExperimentConfig) -> ExperimentConfig {
        c.train.epochs = 40;
        c.seed = 3;
        c
    }

    #[test]
    fn config_validation() {
        assert!(ExperimentConfig::new(Policy::AlOnly).validate().is_err());
        assert!(ExperimentConfig::new(Policy::Nr)
            .with_al(ALConfig::new(Strategy::RS, 0.1))
            .validate()
            .is_err());
        let mut c = ExperimentConfig::new(Policy::Fl);
        c.history = History::Window(0);
        assert!(c.validate().is_err());
        assert!(ExperimentConfig::new(Policy::SslOnly)
            .with_ssl(SSLConfig::new(SslStrategy::ST, 0.2))
            .validate()
            .is_ok());
    }

    #[test]
    fn labels_are_stable() {
        let c = ExperimentConfig::new(Policy::AlSsl)
            .with_al(ALConfig::new(Strategy::BADGE, 0.1))
            .with_ssl(SSLConfig::new(SslStrategy::ST, 0.2));
        assert_eq!(c.label(), "AL_SSL-BADGE-0.10-ST-0.20");
    }

    #[test]
    fn history_examples() {
        let e = |t| LabeledEntry {
            sample: SampleRef { period: t, index: 0 },
            id: format!("s{t}"),
            label: Label::Goodware,
            provenance: Provenance::Oracle,
            acquired_at: t,
        };
        let d: Vec<_> = (0..=4).map(e).collect();
        assert_eq!(apply_history(d.clone(), History::Full, 4), d);
        assert_eq!(apply_history(d.clone(), History::Window(5), 4), d);
        assert_eq!(apply_history(d.clone(), History::Window(1), 4), vec![e(4)]);
        assert_eq!(apply_history(d.clone(), History::Window(2), 4), vec![e(3), e(4)]);
    }

    #[test]
    fn nr_evaluates_one_frozen_model() {
        let s = small_stream(true);
        let run = run_experiment(&s, &fast(ExperimentConfig::new(Policy::Nr))).unwrap();
        let hashes: HashSet<_> = run.logs.iter().map(|l| l.checkpoint.clone()).collect();
        assert_eq!(hashes.len(), 1);
        assert!(run.logs.iter().all(|l| l.n_next == s.initial.len()));
    }

    #[test]
    fn fl_labels_everything() {
        let s = small_stream(false);
        let run = run_experiment(&s, &fast(ExperimentConfig::new(Policy::Fl))).unwrap();
        for l in &run.logs {
            assert_eq!(l.n_next, l.n_train + l.n_unlabeled);
        }
        assert_eq!(run.logs.last().unwrap().oracle_total, s.incoming.iter().map(|b| b.len()).sum::<usize>());
    }

    #[test]
    fn zero_budgets_retrain_on_the_same_set() {
        let s = small_stream(false);
        let cfg = fast(
            ExperimentConfig::new(Policy::AlSsl)
                .with_al(ALConfig::new(Strategy::MS, 0.0))
                .with_ssl(SSLConfig::new(SslStrategy::ST, 0.0)),
        );
        let (d, f) = initial_model(&s, &cfg).unwrap();
        let mut oracle = Oracle::new(&s);
        let mut audit = AuditLog::default();
        let out = update_step(&s, 1, &f, &d, &cfg, &mut oracle, &mut audit, (0, 0)).unwrap();
        assert_eq!(out.next_set, d);
        let again = fit(&s, &d, &cfg, step_seed(cfg.seed, 1)).unwrap();
        assert_eq!(out.next_model, again);
    }

    #[test]
    fn full_al_budget_matches_full_labeling() {
        let s = small_stream(false);
        let al = fast(ExperimentConfig::new(Policy::AlOnly).with_al(ALConfig::new(Strategy::RS, 1.0)));
        let fl = fast(ExperimentConfig::new(Policy::Fl));
        let (d, f) = initial_model(&s, &fl).unwrap();
        let multiset = |v: &[LabeledEntry]| {
            let mut m: Vec<(SampleRef, Label)> = v.iter().map(|e| (e.sample, e.label)).collect();
            m.sort();
            m
        };
        let mut o = Oracle::new(&s);
        let mut a = AuditLog::default();
        let x = update_step(&s, 1, &f, &d, &al, &mut o, &mut a, (0, 0)).unwrap();
        let y = update_step(&s, 1, &f, &d, &fl, &mut o, &mut a, (0, 0)).unwrap();
        assert_eq!(multiset(&x.next_set), multiset(&y.next_set));
    }

    #[test]
    fn al_and_ssl_are_disjoint_and_accounted() {
        let s = small_stream(true);
        let cfg = fast(
            ExperimentConfig::new(Policy::AlSsl)
                .with_al(ALConfig::new(Strategy::CoreSet, 0.05))
                .with_ssl(SSLConfig::new(SslStrategy::AT, 0.3)),
        );
        let run = run_experiment(&s, &cfg).unwrap();
        let mut oracle_sum = 0;
        for (i, l) in run.logs.iter().enumerate() {
            assert_eq!(l.n_al, budget_k(l.n_unlabeled, 0.05));
            let al: HashSet<_> = l.al_selected.iter().collect();
            assert!(l.ssl_selected.iter().all(|j| !al.contains(j)));
            assert_eq!(l.n_ssl, budget_k(l.n_unlabeled - l.n_al, 0.3));
            oracle_sum += l.n_al;
            assert_eq!(l.oracle_total, oracle_sum);
            // Update equation under full history.
            let mut ids: HashSet<String> = run.training_sets[i].iter().map(|e| e.id.clone()).collect();
            let batch = s.batch(l.t);
            ids.extend(l.al_selected.iter().chain(&l.ssl_selected).map(|&j| batch.samples[j].id.clone()));
            let next: HashSet<String> = match run.training_sets.get(i + 1) {
                Some(set) => set.iter().map(|e| e.id.clone()).collect(),
                None => continue,
            };
            assert_eq!(ids, next);
        }
        for set in &run.training_sets {
            for e in set.iter().filter(|e| e.provenance == Provenance::Oracle) {
                assert_eq!(Some(e.label), s.batch(e.sample.period).samples[e.sample.index].true_label);
            }
        }
    }

    #[test]
    fn evaluation_precedes_label_use() {
        let s = small_stream(true);
        let cfg = fast(
            ExperimentConfig::new(Policy::AlSsl)
                .with_al(ALConfig::new(Strategy::RS, 0.1))
                .with_ssl(SSLConfig::new(SslStrategy::ST, 0.1)),
        );
        let run = run_experiment(&s, &cfg).unwrap();
        for t in 1..=s.steps() {
            let eval = run.audit.iter().find(|e| e.kind == EventKind::Evaluate && e.batch == t).unwrap();
            for e in run.audit.iter().filter(|e| e.batch == t && e.kind != EventKind::Evaluate) {
                assert!(e.seq > eval.seq);
            }
        }
    }

    #[test]
    fn window_history_bounds_training_sets() {
        let s = small_stream(false);
        let mut cfg = fast(ExperimentConfig::new(Policy::Fl));
        cfg.history = History::Window(1);
        let run = run_experiment(&s, &cfg).unwrap();
        for (i, set) in run.training_sets.iter().enumerate().skip(1) {
            assert!(set.iter().all(|e| e.acquired_at == i));
        }
    }

    #[test]
    fn runs_are_reproducible() {
        let s = small_stream(true);
        let cfg = fast(
            ExperimentConfig::new(Policy::AlSsl)
                .with_al(ALConfig::new(Strategy::BADGE, 0.1))
                .with_ssl(SSLConfig::new(SslStrategy::ST, 0.2)),
        );
        let a = run_experiment(&s, &cfg).unwrap();
        let b = run_experiment(&s, &cfg).unwrap();
        assert_eq!(a.logs, b.logs);
    }

    #[test]
    fn missing_withheld_label_is_an_error() {
        let mut s = small_stream(false);
        s.incoming[0].samples[3].true_label = None;
        let cfg = fast(ExperimentConfig::new(Policy::Fl));
        assert!(matches!(run_experiment(&s, &cfg), Err(Error::Oracle(_))));
    }

    #[test]
    fn oracle_refuses_unlabeled_samples() {
        let mut s = small_stream(false);
        s.incoming[0].samples[3].true_label = None;
        let mut o = Oracle::new(&s);
        assert!(o.label(SampleRef { period: 1, index: 3 }).is_err());
        assert!(o.label(SampleRef { period: 1, index: 2 }).is_ok());
    }
}
