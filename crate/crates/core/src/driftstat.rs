//! Feature-level drift diagnostics.
//!
//! Each feature gets a Wilcoxon–Mann–Whitney AUC of malware against
//! goodware values and a two-sided p-value. Significant features carry an
//! association direction `a_j ∈ {−1, 0, +1}`. The stability score compares
//! the directions seen on a training set with those on the next batch.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use thiserror::Error;

use crate::corpus::{Label, SparseVector};
use crate::seed::{self, tag};

#[derive(Debug, Error, PartialEq)]
pub enum StatError {
    #[error("both classes must be non-empty (n0 = {n0}, n1 = {n1})")]
    EmptyClass { n0: usize, n1: usize },
    #[error("length mismatch ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("association vectors must have d ≥ 1")]
    EmptyVector,
    #[error("correlation needs at least 3 pairs, got {0}")]
    TooShort(usize),
    #[error("zero variance: correlation undefined")]
    ZeroVariance,
    #[error("U = {u} outside [0, {max}]")]
    BadStatistic { u: f64, max: f64 },
    #[error("tie profile sums to {got}, expected {expected}")]
    BadTieProfile { got: usize, expected: usize },
    #[error("non-finite value")]
    NonFinite,
}

pub const DEFAULT_ALPHA: f64 = 0.05;
/// Largest `n0 + n1` for which the permutation distribution is enumerated.
pub const EXACT_MAX_N: usize = 20;

/// Per value group in ascending value order: `(class-0 count, class-1 count)`.
type Groups = Vec<(usize, usize)>;

/// Group `(value, is_class_1)` pairs by equal value, with `zeros` extra
/// class-0/class-1 members of value 0 merged in at their sorted position.
fn build_groups(mut pairs: Vec<(f64, bool)>, zeros: (usize, usize)) -> Groups {
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out: Vec<(f64, usize, usize)> = Vec::new();
    let mut push = |v: f64, c0: usize, c1: usize| match out.last_mut() {
        Some(g) if g.0 == v => {
            g.1 += c0;
            g.2 += c1;
        }
        _ => out.push((v, c0, c1)),
    };
    let mut zeros_done = zeros == (0, 0);
    for (v, is1) in pairs {
        if !zeros_done && v >= 0.0 {
            push(0.0, zeros.0, zeros.1);
            zeros_done = true;
        }
        push(v, usize::from(!is1), usize::from(is1));
    }
    if !zeros_done {
        push(0.0, zeros.0, zeros.1);
    }
    out.into_iter().map(|(_, a, b)| (a, b)).collect()
}

/// Doubled U statistic of class 1 over value groups; exact in integers.
fn doubled_u(groups: &Groups) -> u64 {
    let mut below0 = 0u64;
    let mut acc = 0u64;
    for &(g0, g1) in groups {
        acc += g1 as u64 * (2 * below0 + g0 as u64);
        below0 += g0 as u64;
    }
    acc
}

fn tie_profile(groups: &Groups) -> Vec<usize> {
    groups.iter().map(|(a, b)| a + b).collect()
}

/// Mann–Whitney `U` of class 1 against class 0 with ties counted ½, and
/// `auc = U / (n0·n1)`.
pub fn feature_auc(values_class0: &[f64], values_class1: &[f64]) -> Result<(f64, f64), StatError> {
    let (n0, n1) = (values_class0.len(), values_class1.len());
    if n0 == 0 || n1 == 0 {
        return Err(StatError::EmptyClass { n0, n1 });
    }
    if values_class0.iter().chain(values_class1).any(|v| !v.is_finite()) {
        return Err(StatError::NonFinite);
    }
    let pairs = values_class0
        .iter()
        .map(|&v| (v, false))
        .chain(values_class1.iter().map(|&v| (v, true)))
        .collect();
    let u = doubled_u(&build_groups(pairs, (0, 0))) as f64 / 2.0;
    Ok((u / (n0 * n1) as f64, u))
}

/// Two-sided p-value `min(1, 2·min(P(U' ≤ U), P(U' ≥ U)))` of the WMW test.
///
/// `tie_profile` lists the sizes of the groups of equal values in ascending
/// value order. For `n0 + n1 ≤ 20` the null distribution is enumerated
/// exactly over label assignments to that value multiset; above that a
/// normal approximation with tie-corrected variance and continuity
/// correction is used.
pub fn wmw_pvalue(u: f64, n0: usize, n1: usize, tie_profile: &[usize]) -> Result<f64, StatError> {
    if n0 == 0 || n1 == 0 {
        return Err(StatError::EmptyClass { n0, n1 });
    }
    let max = (n0 * n1) as f64;
    if !(0.0..=max).contains(&u) {
        return Err(StatError::BadStatistic { u, max });
    }
    let n = n0 + n1;
    let total: usize = tie_profile.iter().sum();
    if total != n {
        return Err(StatError::BadTieProfile { got: total, expected: n });
    }
    if n <= EXACT_MAX_N {
        Ok(wmw_exact(u, n0, n1, tie_profile))
    } else {
        Ok(wmw_normal(u, n0, n1, tie_profile))
    }
}

/// Exact two-sided p-value by dynamic programming over value groups.
pub fn wmw_exact(u: f64, n0: usize, n1: usize, tie_profile: &[usize]) -> f64 {
    let max2 = 2 * n0 * n1;
    // ways[m1][2U]: label assignments of the groups seen so far with m1
    // class-1 members and doubled partial statistic 2U.
    let mut ways = vec![vec![0f64; max2 + 1]; n1 + 1];
    ways[0][0] = 1.0;
    let mut seen = 0;
    for &t in tie_profile {
        let mut next = vec![vec![0f64; max2 + 1]; n1 + 1];
        for m1 in 0..=n1.min(seen) {
            let below0 = seen - m1;
            if below0 > n0 {
                continue;
            }
            for (s, &w) in ways[m1].iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                for g1 in 0..=t.min(n1 - m1) {
                    let g0 = t - g1;
                    if below0 + g0 > n0 {
                        continue;
                    }
                    let s2 = s + g1 * (2 * below0 + g0);
                    next[m1 + g1][s2] += w * binom(t, g1);
                }
            }
        }
        ways = next;
        seen += t;
    }
    let dist = &ways[n1];
    let all: f64 = dist.iter().sum();
    let u2 = (2.0 * u).round() as usize;
    let le: f64 = dist[..=u2.min(max2)].iter().sum();
    let ge: f64 = dist[u2.min(max2)..].iter().sum();
    (2.0 * le.min(ge) / all).min(1.0)
}

fn binom(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64).round()
}

/// Normal approximation with tie-corrected variance and a 0.5 continuity
/// correction; zero variance gives `p = 1`.
pub fn wmw_normal(u: f64, n0: usize, n1: usize, tie_profile: &[usize]) -> f64 {
    let n = (n0 + n1) as f64;
    let (a, b) = (n0 as f64, n1 as f64);
    let ties: f64 = tie_profile.iter().map(|&t| (t as f64).powi(3) - t as f64).sum();
    let var = a * b / 12.0 * ((n + 1.0) - ties / (n * (n - 1.0)));
    if !(var > 0.0) {
        return 1.0;
    }
    let z = ((u - a * b / 2.0).abs() - 0.5).max(0.0) / var.sqrt();
    erfc(z / std::f64::consts::SQRT_2).min(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureAssociation {
    pub auc: f64,
    pub p: f64,
    pub a: i8,
}

/// Direction of `2U − n0·n1`, decided on the exact doubled statistic.
fn direction(u2: u64, n0: usize, n1: usize) -> i8 {
    let m = (n0 * n1) as u64;
    match u2.cmp(&m) {
        std::cmp::Ordering::Greater => 1,
        std::cmp::Ordering::Less => -1,
        std::cmp::Ordering::Equal => 0,
    }
}

fn associate_groups(groups: &Groups, n0: usize, n1: usize, alpha: f64) -> FeatureAssociation {
    let u2 = doubled_u(groups);
    let u = u2 as f64 / 2.0;
    let p = wmw_pvalue(u, n0, n1, &tie_profile(groups)).expect("statistic from valid groups");
    let dir = direction(u2, n0, n1);
    FeatureAssociation {
        auc: u / (n0 * n1) as f64,
        p,
        a: if p < alpha { dir } else { 0 },
    }
}

/// Association indicator of one dense feature column.
pub fn class_association(column: &[f64], labels: &[Label], alpha: f64) -> Result<FeatureAssociation, StatError> {
    if column.len() != labels.len() {
        return Err(StatError::LengthMismatch(column.len(), labels.len()));
    }
    let n1 = labels.iter().filter(|y| y.is_malware()).count();
    let n0 = labels.len() - n1;
    if n0 == 0 || n1 == 0 {
        return Err(StatError::EmptyClass { n0, n1 });
    }
    if column.iter().any(|v| !v.is_finite()) {
        return Err(StatError::NonFinite);
    }
    let pairs = column.iter().zip(labels).map(|(&v, y)| (v, y.is_malware())).collect();
    Ok(associate_groups(&build_groups(pairs, (0, 0)), n0, n1, alpha))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssociationVector {
    pub features: Vec<FeatureAssociation>,
    pub alpha: f64,
    pub n0: usize,
    pub n1: usize,
    pub benjamini_hochberg: bool,
}

impl AssociationVector {
    pub fn indicators(&self) -> Vec<i8> {
        self.features.iter().map(|f| f.a).collect()
    }
}

/// Per-feature associations over labeled sparse samples. Implicit zeros
/// form one value group per feature, so cost scales with non-zeros.
///
/// With `benjamini_hochberg` the raw `p < α` gate is replaced by the BH
/// step-up rule at level `α` across features.
pub fn association_vector(
    samples: &[(&SparseVector, Label)],
    alpha: f64,
    benjamini_hochberg: bool,
) -> Result<AssociationVector, StatError> {
    let n1 = samples.iter().filter(|(_, y)| y.is_malware()).count();
    let n0 = samples.len() - n1;
    if n0 == 0 || n1 == 0 {
        return Err(StatError::EmptyClass { n0, n1 });
    }
    let d = samples[0].0.dim();
    if let Some((x, _)) = samples.iter().find(|(x, _)| x.dim() != d) {
        return Err(StatError::LengthMismatch(d, x.dim()));
    }
    let mut cols: Vec<Vec<(f64, bool)>> = vec![Vec::new(); d];
    for (x, y) in samples {
        for (j, v) in x.iter() {
            cols[j].push((v, y.is_malware()));
        }
    }
    let mut features: Vec<FeatureAssociation> = cols
        .into_par_iter()
        .map(|col| {
            let nz1 = col.iter().filter(|c| c.1).count();
            let zeros = (n0 - (col.len() - nz1), n1 - nz1);
            // Under BH the direction is kept ungated here and gated below.
            let gate = if benjamini_hochberg { f64::INFINITY } else { alpha };
            associate_groups(&build_groups(col, zeros), n0, n1, gate)
        })
        .collect();
    if benjamini_hochberg {
        apply_bh(&mut features, alpha);
    }
    Ok(AssociationVector {
        features,
        alpha,
        n0,
        n1,
        benjamini_hochberg,
    })
}

/// Benjamini–Hochberg step-up at level `alpha`: features whose p-value
/// rank `i` (1-based, ties by feature index) satisfies `p ≤ i·α/d` for the
/// largest such `i` keep their direction, all others are zeroed.
fn apply_bh(features: &mut [FeatureAssociation], alpha: f64) {
    let d = features.len();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| features[a].p.total_cmp(&features[b].p).then(a.cmp(&b)));
    let cutoff = (1..=d)
        .rev()
        .find(|&i| features[order[i - 1]].p <= i as f64 * alpha / d as f64)
        .unwrap_or(0);
    for &j in &order[cutoff..] {
        features[j].a = 0;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StabilityCounts {
    pub preserved: usize,
    pub flipped: usize,
    pub half: usize,
    pub both_null: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stability {
    pub beta: f64,
    pub counts: StabilityCounts,
}

/// Per-feature term `a_tr·a_ts − I[|a_tr| + |a_ts| = 1]`.
pub fn stability_contribution(a_tr: i8, a_ts: i8) -> i64 {
    let half = (a_tr.abs() + a_ts.abs() == 1) as i64;
    a_tr as i64 * a_ts as i64 - half
}

/// `β = (1/d) Σ_j (a_tr,j · a_ts,j − I[|a_tr,j| + |a_ts,j| = 1])`.
pub fn stability_score(a_train: &[i8], a_test: &[i8]) -> Result<Stability, StatError> {
    if a_train.len() != a_test.len() {
        return Err(StatError::LengthMismatch(a_train.len(), a_test.len()));
    }
    if a_train.is_empty() {
        return Err(StatError::EmptyVector);
    }
    let mut counts = StabilityCounts::default();
    let mut sum = 0i64;
    for (&a, &b) in a_train.iter().zip(a_test) {
        sum += stability_contribution(a, b);
        match (a * b, a.abs() + b.abs()) {
            (1, _) => counts.preserved += 1,
            (-1, _) => counts.flipped += 1,
            (_, 1) => counts.half += 1,
            _ => counts.both_null += 1,
        }
    }
    Ok(Stability {
        beta: sum as f64 / a_train.len() as f64,
        counts,
    })
}

/// Stability between a training set and the next evaluation batch, with
/// both association vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepStability {
    pub t: usize,
    /// Missing when either side holds a single class.
    pub stability: Option<Stability>,
    pub train: Option<AssociationVector>,
    pub test: Option<AssociationVector>,
}

impl StepStability {
    pub fn beta(&self) -> Option<f64> {
        self.stability.map(|s| s.beta)
    }
}

pub fn step_stability(
    t: usize,
    train: &[(&SparseVector, Label)],
    test: &[(&SparseVector, Label)],
    alpha: f64,
    benjamini_hochberg: bool,
) -> Result<StepStability, StatError> {
    let tr = association_vector(train, alpha, benjamini_hochberg);
    let ts = association_vector(test, alpha, benjamini_hochberg);
    let single = |r: &Result<AssociationVector, StatError>| matches!(r, Err(StatError::EmptyClass { .. }));
    if single(&tr) || single(&ts) {
        return Ok(StepStability {
            t,
            stability: None,
            train: tr.ok(),
            test: ts.ok(),
        });
    }
    let (tr, ts) = (tr?, ts?);
    let stability = stability_score(&tr.indicators(), &ts.indicators())?;
    Ok(StepStability {
        t,
        stability: Some(stability),
        train: Some(tr),
        test: Some(ts),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub steps: Vec<StepStability>,
    /// `(β, F1)` for every step where both are present.
    pub pairs: Vec<(f64, f64)>,
}

/// β for each step `t = 1..=T`: associations on the training set of the
/// model evaluated at `t` against those on batch `t` with its withheld
/// labels. `training_sets[t − 1]` and `f1[t − 1]` belong to step `t`.
pub fn beta_series(
    stream: &crate::corpus::TemporalStream,
    training_sets: &[Vec<(&SparseVector, Label)>],
    f1: &[Option<f64>],
    alpha: f64,
    benjamini_hochberg: bool,
) -> Result<StabilityReport, StatError> {
    if training_sets.len() != stream.steps() {
        return Err(StatError::LengthMismatch(training_sets.len(), stream.steps()));
    }
    let mut steps = Vec::with_capacity(training_sets.len());
    let mut pairs = Vec::new();
    for (i, train) in training_sets.iter().enumerate() {
        let t = i + 1;
        let test: Vec<(&SparseVector, Label)> = stream
            .batch(t)
            .samples
            .iter()
            .filter_map(|s| s.true_label.map(|y| (&s.x, y)))
            .collect();
        let step = step_stability(t, train, &test, alpha, benjamini_hochberg)?;
        if let (Some(b), Some(Some(f))) = (step.beta(), f1.get(i)) {
            pairs.push((b, *f));
        }
        steps.push(step);
    }
    Ok(StabilityReport { steps, pairs })
}

pub const DEFAULT_RESAMPLES: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub n: usize,
    pub pearson_r: f64,
    pub kendall_tau: f64,
    pub p_r: f64,
    pub p_tau: f64,
    pub resamples: usize,
    pub seed: u64,
}

fn check_series(x: &[f64], y: &[f64]) -> Result<(), StatError> {
    if x.len() != y.len() {
        return Err(StatError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 3 {
        return Err(StatError::TooShort(x.len()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(StatError::NonFinite);
    }
    let constant = |s: &[f64]| s.iter().all(|&v| v == s[0]);
    if constant(x) || constant(y) {
        return Err(StatError::ZeroVariance);
    }
    Ok(())
}

/// Pearson correlation on centered sums, clamped to `[−1, 1]`.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, StatError> {
    check_series(x, y)?;
    Ok(pearson_unchecked(x, y))
}

fn pearson_unchecked(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
}

/// Kendall's τ-b, adjusted for ties in either series.
pub fn kendall_tau_b(x: &[f64], y: &[f64]) -> Result<f64, StatError> {
    check_series(x, y)?;
    Ok(kendall_unchecked(x, y))
}

fn kendall_unchecked(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    let (mut s, mut tx, mut ty) = (0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let a = (x[i] - x[j]).partial_cmp(&0.0).unwrap() as i64;
            let b = (y[i] - y[j]).partial_cmp(&0.0).unwrap() as i64;
            s += a * b;
            tx += (a == 0) as i64;
            ty += (b == 0) as i64;
        }
    }
    let pairs = (n * (n - 1) / 2) as i64;
    let denom = (((pairs - tx) * (pairs - ty)) as f64).sqrt();
    if denom == 0.0 {
        return 0.0;
    }
    (s as f64 / denom).clamp(-1.0, 1.0)
}

/// Pearson r and Kendall τ-b with two-sided permutation p-values
/// `(1 + #{|stat_perm| ≥ |stat_obs|}) / (R + 1)`. Resample `r` shuffles `y`
/// with a generator keyed on `(seed, r)`.
pub fn correlate(x: &[f64], y: &[f64], resamples: usize, seed: u64) -> Result<CorrelationReport, StatError> {
    check_series(x, y)?;
    let r_obs = pearson_unchecked(x, y);
    let t_obs = kendall_unchecked(x, y);
    // Absorbs rounding differences between permutations that are
    // mathematically as extreme as the observed pairing.
    const EPS: f64 = 1e-12;
    let (hits_r, hits_t) = (0..resamples)
        .into_par_iter()
        .map(|r| {
            let mut rng = seed::rng(seed, &[tag::PERMUTATION, r as u64]);
            let mut yp = y.to_vec();
            yp.shuffle(&mut rng);
            (
                (pearson_unchecked(x, &yp).abs() >= r_obs.abs() - EPS) as usize,
                (kendall_unchecked(x, &yp).abs() >= t_obs.abs() - EPS) as usize,
            )
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    let denom = (resamples + 1) as f64;
    Ok(CorrelationReport {
        n: x.len(),
        pearson_r: r_obs,
        kendall_tau: t_obs,
        p_r: (1 + hits_r) as f64 / denom,
        p_tau: (1 + hits_t) as f64 / denom,
        resamples,
        seed,
    })
}
