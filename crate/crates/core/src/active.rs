//! Pool-based query strategies as budgeted top-k selectors.
//!
//! Every strategy returns exactly `min(k, |U|)` distinct pool indices.
//! Ties are broken by ascending pool index. Randomised strategies draw from
//! a generator keyed on the configured seed, and parallel sections only
//! compute per-sample values that are then reduced serially, so selections
//! do not depend on the thread count.

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Label, SparseVector};
use crate::detector::{self, DetectorError, TrainConfig};
use crate::metrics::{average_precision, confidence, entropy_unchecked};
use crate::seed::{self, tag};

#[derive(Debug, Error, PartialEq)]
pub enum ActiveError {
    #[error("budget {k} exceeds pool size {n}")]
    BudgetExceedsPool { k: usize, n: usize },
    #[error("{what}: expected {expected} entries, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("score {0} outside [0, 1]")]
    ScoreOutOfRange(f64),
    #[error("expected-AP selection needs both classes in the {0} set")]
    SingleClass(&'static str),
    #[error("retraining failed: {0}")]
    Retrain(#[from] DetectorError),
    #[error("invalid AL config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    RS,
    MS,
    LCS,
    ES,
    EAP,
    CLUE,
    CoreSet,
    BADGE,
}

impl Strategy {
    pub const ALL: [Strategy; 8] = [
        Strategy::RS,
        Strategy::MS,
        Strategy::LCS,
        Strategy::ES,
        Strategy::EAP,
        Strategy::CLUE,
        Strategy::CoreSet,
        Strategy::BADGE,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::RS => "RS",
            Strategy::MS => "MS",
            Strategy::LCS => "LCS",
            Strategy::ES => "ES",
            Strategy::EAP => "EAP",
            Strategy::CLUE => "CLUE",
            Strategy::CoreSet => "CoreSet",
            Strategy::BADGE => "BADGE",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoresetInit {
    #[default]
    Labeled,
    Empty,
}

/// Split on which expected-AP candidates are scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EapEval {
    /// Retrain on all of `D` plus the candidate, score AP on `D`.
    #[default]
    Resubstitution,
    /// Retrain on a seeded 75% of `D` plus the candidate, score AP on the
    /// other 25%.
    Holdout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ALConfig {
    pub strategy: Strategy,
    pub budget_fraction: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub coreset_init: CoresetInit,
    #[serde(default = "default_clue_max_iter")]
    pub clue_max_iter: usize,
    #[serde(default = "default_clue_tol")]
    pub clue_tol: f64,
    #[serde(default = "default_eap_cap")]
    pub eap_candidate_cap: usize,
    #[serde(default)]
    pub eap_eval: EapEval,
    /// L2-normalise feature vectors before any distance computation.
    #[serde(default)]
    pub normalize: bool,
}

fn default_clue_max_iter() -> usize {
    100
}
fn default_clue_tol() -> f64 {
    1e-4
}
fn default_eap_cap() -> usize {
    200
}

impl ALConfig {
    pub fn new(strategy: Strategy, budget_fraction: f64) -> Self {
        ALConfig {
            strategy,
            budget_fraction,
            seed: 0,
            coreset_init: CoresetInit::default(),
            clue_max_iter: default_clue_max_iter(),
            clue_tol: default_clue_tol(),
            eap_candidate_cap: default_eap_cap(),
            eap_eval: EapEval::default(),
            normalize: false,
        }
    }

    pub fn validate(&self) -> Result<(), ActiveError> {
        if !(0.0..=1.0).contains(&self.budget_fraction) {
            return Err(ActiveError::InvalidConfig(format!("budget {} not in [0, 1]", self.budget_fraction)));
        }
        if self.clue_max_iter == 0 || self.eap_candidate_cap == 0 {
            return Err(ActiveError::InvalidConfig("caps must be positive".into()));
        }
        if !(self.clue_tol.is_finite() && self.clue_tol >= 0.0) {
            return Err(ActiveError::InvalidConfig("clue_tol must be finite and non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    /// Pool indices in pick order.
    pub selected: Vec<usize>,
    /// `(pool index, utility)` for every sample the strategy scored.
    pub utilities: Vec<(usize, f64)>,
    pub k: usize,
}

/// `round(π·n)` with halves rounded up, clamped to `[0, n]`.
pub fn budget_k(n: usize, pi: f64) -> usize {
    let k = (pi * n as f64 + 0.5).floor();
    if k.is_nan() || k <= 0.0 {
        0
    } else {
        (k as usize).min(n)
    }
}

/// Everything a strategy may see about the current step. Labels of the
/// pool are never part of it.
#[derive(Clone, Copy)]
pub struct QueryInput<'a> {
    pub pool: &'a [&'a SparseVector],
    pub scores: &'a [f64],
    pub labeled: &'a [(&'a SparseVector, Label)],
    pub train: &'a TrainConfig,
}

/// Run the configured strategy with `k = budget_k(|U|, π)`.
pub fn select(cfg: &ALConfig, input: QueryInput<'_>) -> Result<SelectionResult, ActiveError> {
    cfg.validate()?;
    let k = budget_k(input.pool.len(), cfg.budget_fraction);
    select_k(cfg, input, k)
}

/// Run the configured strategy with an explicit budget.
pub fn select_k(cfg: &ALConfig, input: QueryInput<'_>, k: usize) -> Result<SelectionResult, ActiveError> {
    let n = input.pool.len();
    if input.scores.len() != n {
        return Err(ActiveError::LengthMismatch {
            what: "scores",
            expected: n,
            got: input.scores.len(),
        });
    }
    if let Some(&s) = input.scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(ActiveError::ScoreOutOfRange(s));
    }
    if k > n {
        return Err(ActiveError::BudgetExceedsPool { k, n });
    }
    let normalized: Vec<SparseVector>;
    let pool_refs: Vec<&SparseVector>;
    let pool: &[&SparseVector] = if cfg.normalize {
        normalized = input.pool.iter().map(|x| x.normalized()).collect();
        pool_refs = normalized.iter().collect();
        &pool_refs
    } else {
        input.pool
    };
    match cfg.strategy {
        Strategy::RS => Ok(select_random(n, k, cfg.seed)),
        Strategy::MS | Strategy::LCS | Strategy::ES => Ok(select_uncertainty(input.scores, k, cfg.strategy)),
        Strategy::CoreSet => {
            let labeled: Vec<SparseVector> = match cfg.coreset_init {
                CoresetInit::Empty => Vec::new(),
                CoresetInit::Labeled if cfg.normalize => input.labeled.iter().map(|(x, _)| x.normalized()).collect(),
                CoresetInit::Labeled => input.labeled.iter().map(|(x, _)| (*x).clone()).collect(),
            };
            let refs: Vec<&SparseVector> = labeled.iter().collect();
            Ok(select_coreset(pool, &refs, k))
        }
        Strategy::CLUE => Ok(select_clue(pool, input.scores, k, cfg.seed, cfg.clue_max_iter, cfg.clue_tol)),
        Strategy::BADGE => Ok(select_badge(pool, input.scores, k, cfg.seed)),
        Strategy::EAP => select_eap(
            &QueryInput { pool, ..input },
            k,
            cfg.eap_candidate_cap,
            cfg.eap_eval,
            cfg.seed,
        ),
    }
}

/// Indices of the `k` largest `keys`, ties by ascending index.
fn top_k_desc(keys: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..keys.len()).collect();
    order.sort_by(|&a, &b| keys[b].total_cmp(&keys[a]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

/// `k` distinct indices drawn uniformly without replacement.
pub fn select_random(n: usize, k: usize, seed: u64) -> SelectionResult {
    let mut rng = seed::rng(seed, &[tag::ACTIVE, 0]);
    SelectionResult {
        selected: index::sample(&mut rng, n, k).into_vec(),
        utilities: Vec::new(),
        k,
    }
}

/// Per-sample utility under an uncertainty variant.
pub fn uncertainty_utility(f: f64, variant: Strategy) -> f64 {
    match variant {
        Strategy::MS => -(2.0 * f - 1.0).abs(),
        Strategy::LCS => -f.max(1.0 - f),
        Strategy::ES => entropy_unchecked(f),
        other => panic!("{} is not an uncertainty variant", other.name()),
    }
}

pub fn rank_uncertainty(scores: &[f64], variant: Strategy) -> Vec<f64> {
    scores.iter().map(|&f| uncertainty_utility(f, variant)).collect()
}

/// MS, LCS and ES utilities are all strictly decreasing functions of the
/// confidence `max(f, 1 − f)`, so selection ranks on that shared key: the
/// `k` least confident samples.
pub fn select_uncertainty(scores: &[f64], k: usize, variant: Strategy) -> SelectionResult {
    let key: Vec<f64> = scores.iter().map(|&f| -confidence(f)).collect();
    let selected = top_k_desc(&key, k);
    let utilities = rank_uncertainty(scores, variant).into_iter().enumerate().collect();
    SelectionResult { selected, utilities, k }
}

/// Greedy farthest-first traversal from the labeled set (or, with an empty
/// labeled set, from pool index 0).
pub fn select_coreset(pool: &[&SparseVector], labeled: &[&SparseVector], k: usize) -> SelectionResult {
    let n = pool.len();
    let mut min_d: Vec<f64> = pool
        .par_iter()
        .map(|x| labeled.iter().map(|s| x.squared_distance(s)).fold(f64::INFINITY, f64::min))
        .collect();
    let mut chosen = vec![false; n];
    let mut selected = Vec::with_capacity(k);
    let mut utilities = Vec::with_capacity(k);
    for _ in 0..k {
        let mut best: Option<usize> = None;
        for i in 0..n {
            if !chosen[i] && best.is_none_or(|b| min_d[i] > min_d[b]) {
                best = Some(i);
            }
        }
        let b = best.expect("k ≤ n leaves a candidate");
        chosen[b] = true;
        selected.push(b);
        utilities.push((b, min_d[b].sqrt()));
        let pick = pool[b];
        min_d.par_iter_mut().zip(pool.par_iter()).for_each(|(d, x)| {
            *d = d.min(x.squared_distance(pick));
        });
    }
    SelectionResult { selected, utilities, k }
}

/// `‖x − c‖²` for sparse `x` and dense `c` with precomputed `‖c‖²`.
fn sq_dist_dense(x: &SparseVector, c: &[f64], c_norm_sq: f64) -> f64 {
    let mut acc = c_norm_sq;
    for (j, v) in x.iter() {
        let d = v - c[j];
        acc += d * d - c[j] * c[j];
    }
    acc.max(0.0)
}

/// Index into `weights` drawn with probability proportional to weight,
/// scanning cumulative sums in index order. `None` when the total is 0.
fn sample_weighted(weights: &[f64], rng: &mut impl Rng) -> Option<usize> {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return None;
    }
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last = None;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            acc += w;
            last = Some(i);
            if u < acc {
                return Some(i);
            }
        }
    }
    last
}

/// Uniform pick among indices not yet chosen.
fn sample_unchosen(chosen: &[bool], rng: &mut impl Rng) -> usize {
    let free: Vec<usize> = (0..chosen.len()).filter(|&i| !chosen[i]).collect();
    free[rng.random_range(0..free.len())]
}

/// Entropy-weighted k-means, then for each centroid in order the nearest
/// sample not yet chosen.
pub fn select_clue(
    pool: &[&SparseVector],
    scores: &[f64],
    k: usize,
    seed: u64,
    max_iter: usize,
    tol: f64,
) -> SelectionResult {
    let n = pool.len();
    if k == 0 {
        return SelectionResult {
            selected: Vec::new(),
            utilities: Vec::new(),
            k,
        };
    }
    let dim = pool[0].dim();
    let mut weights: Vec<f64> = scores.iter().map(|&f| entropy_unchecked(f)).collect();
    if weights.iter().all(|&w| w == 0.0) {
        weights = vec![1.0; n];
    }
    let mut rng = seed::rng(seed, &[tag::ACTIVE, 1]);

    // Weighted k-means++ seeding.
    let mut seeds_used = vec![false; n];
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut d2 = vec![f64::INFINITY; n];
    for c in 0..k {
        let pick = if c == 0 {
            sample_weighted(&weights, &mut rng)
        } else {
            let wd: Vec<f64> = weights.iter().zip(&d2).map(|(w, d)| w * d).collect();
            sample_weighted(&wd, &mut rng)
        };
        let pick = pick.filter(|&i| !seeds_used[i]).unwrap_or_else(|| {
            let free_w: Vec<f64> = (0..n).map(|i| if seeds_used[i] { 0.0 } else { weights[i] }).collect();
            sample_weighted(&free_w, &mut rng).unwrap_or_else(|| sample_unchosen(&seeds_used, &mut rng))
        });
        seeds_used[pick] = true;
        let p = pool[pick];
        d2.par_iter_mut().zip(pool.par_iter()).for_each(|(d, x)| *d = d.min(x.squared_distance(p)));
        centroids.push(p.to_dense());
    }

    // Lloyd iterations.
    for _ in 0..max_iter {
        let norms: Vec<f64> = centroids.iter().map(|c| c.iter().map(|v| v * v).sum()).collect();
        let assign: Vec<usize> = pool
            .par_iter()
            .map(|x| {
                let mut best = 0;
                let mut best_d = f64::INFINITY;
                for (ci, c) in centroids.iter().enumerate() {
                    let d = sq_dist_dense(x, c, norms[ci]);
                    if d < best_d {
                        best_d = d;
                        best = ci;
                    }
                }
                best
            })
            .collect();
        let mut sums = vec![vec![0.0; dim]; k];
        let mut mass = vec![0.0; k];
        for i in 0..n {
            let c = assign[i];
            mass[c] += weights[i];
            for (j, v) in pool[i].iter() {
                sums[c][j] += weights[i] * v;
            }
        }
        let mut shift: f64 = 0.0;
        for c in 0..k {
            if mass[c] > 0.0 {
                let next: Vec<f64> = sums[c].iter().map(|s| s / mass[c]).collect();
                let s: f64 = next.iter().zip(&centroids[c]).map(|(a, b)| (a - b) * (a - b)).sum();
                shift = shift.max(s.sqrt());
                centroids[c] = next;
            }
        }
        if shift < tol {
            break;
        }
    }

    let norms: Vec<f64> = centroids.iter().map(|c| c.iter().map(|v| v * v).sum()).collect();
    let mut chosen = vec![false; n];
    let mut selected = Vec::with_capacity(k);
    for (ci, c) in centroids.iter().enumerate() {
        let dists: Vec<f64> = pool.par_iter().map(|x| sq_dist_dense(x, c, norms[ci])).collect();
        let mut best: Option<usize> = None;
        for i in 0..n {
            if !chosen[i] && best.is_none_or(|b| dists[i] < dists[b]) {
                best = Some(i);
            }
        }
        let b = best.expect("k ≤ n leaves a candidate");
        chosen[b] = true;
        selected.push(b);
    }
    SelectionResult {
        selected,
        utilities: weights.into_iter().enumerate().collect(),
        k,
    }
}

/// Gradient embedding `[ψ₀(x), ψ₁(x)]` with `ψ_i = (f_i − I(ŷ = i))·x`,
/// `f₁ = f`, `f₀ = 1 − f` and `ŷ = I(f > 0.5)`.
pub fn badge_embedding(x: &SparseVector, f: f64) -> SparseVector {
    let y_hat = f > 0.5;
    let c0 = (1.0 - f) - if y_hat { 0.0 } else { 1.0 };
    let c1 = f - if y_hat { 1.0 } else { 0.0 };
    x.scaled(c0).concat(&x.scaled(c1))
}

/// k-means++ seeding on gradient embeddings: the first pick is uniform,
/// each later pick has probability proportional to its squared distance to
/// the nearest pick so far. With all remaining distances zero the pick is
/// uniform over unchosen samples.
pub fn select_badge(pool: &[&SparseVector], scores: &[f64], k: usize, seed: u64) -> SelectionResult {
    let n = pool.len();
    let emb: Vec<SparseVector> = pool
        .par_iter()
        .zip(scores.par_iter())
        .map(|(x, &f)| badge_embedding(x, f))
        .collect();
    let mut rng = seed::rng(seed, &[tag::ACTIVE, 2]);
    let mut chosen = vec![false; n];
    let mut d2 = vec![f64::INFINITY; n];
    let mut selected = Vec::with_capacity(k);
    for round in 0..k {
        let pick = if round == 0 {
            rng.random_range(0..n)
        } else {
            let w: Vec<f64> = (0..n).map(|i| if chosen[i] { 0.0 } else { d2[i] }).collect();
            sample_weighted(&w, &mut rng).unwrap_or_else(|| sample_unchosen(&chosen, &mut rng))
        };
        chosen[pick] = true;
        selected.push(pick);
        let e = &emb[pick];
        d2.par_iter_mut().zip(emb.par_iter()).for_each(|(d, x)| *d = d.min(x.squared_distance(e)));
    }
    SelectionResult {
        selected,
        utilities: Vec::new(),
        k,
    }
}

/// Candidate pool for expected-AP selection: all of `0..n` when `n ≤ cap`,
/// else a seeded uniform subsample of size `cap`; ascending either way.
pub fn eap_candidates(n: usize, cap: usize, seed: u64) -> Vec<usize> {
    if n <= cap {
        return (0..n).collect();
    }
    let mut rng = seed::rng(seed, &[tag::ACTIVE, 3]);
    let mut c = index::sample(&mut rng, n, cap).into_vec();
    c.sort_unstable();
    c
}

/// Indices of `D` held out for AP evaluation in holdout mode.
pub fn eap_holdout_mask(n: usize, seed: u64) -> Vec<bool> {
    (0..n).map(|i| seed::uniform(seed, &[tag::EAP_HOLDOUT, i as u64]) < 0.25).collect()
}

/// Expected-AP selection. For each candidate `x` and each label `y`, the
/// detector is retrained on the fit split with `(x, y)` appended last and
/// scored by AP on the evaluation split; the utility is
/// `(1 − f(x))·AP₀ + f(x)·AP₁`. The `k` highest utilities are taken, and
/// any budget beyond the candidate pool is filled by uniform sampling.
pub fn select_eap(
    input: &QueryInput<'_>,
    k: usize,
    candidate_cap: usize,
    eval: EapEval,
    seed: u64,
) -> Result<SelectionResult, ActiveError> {
    if k == 0 {
        return Ok(SelectionResult {
            selected: Vec::new(),
            utilities: Vec::new(),
            k,
        });
    }
    let n = input.pool.len();
    let both = |set: &[(&SparseVector, Label)]| {
        set.iter().any(|(_, y)| y.is_malware()) && set.iter().any(|(_, y)| !y.is_malware())
    };
    if !both(input.labeled) {
        return Err(ActiveError::SingleClass("labeled"));
    }
    let (fit, evaluation): (Vec<_>, Vec<_>) = match eval {
        EapEval::Resubstitution => (input.labeled.to_vec(), input.labeled.to_vec()),
        EapEval::Holdout => {
            let mask = eap_holdout_mask(input.labeled.len(), seed);
            let mut fit = Vec::new();
            let mut ev = Vec::new();
            for (e, &held) in input.labeled.iter().zip(&mask) {
                if held { ev.push(*e) } else { fit.push(*e) }
            }
            if !both(&ev) {
                return Err(ActiveError::SingleClass("holdout"));
            }
            (fit, ev)
        }
    };
    let eval_x: Vec<&SparseVector> = evaluation.iter().map(|(x, _)| *x).collect();
    let eval_y: Vec<Label> = evaluation.iter().map(|(_, y)| *y).collect();

    let candidates = eap_candidates(n, candidate_cap, seed);
    let utilities: Vec<f64> = candidates
        .par_iter()
        .map(|&i| -> Result<f64, ActiveError> {
            let x = input.pool[i];
            let f = input.scores[i];
            let mut ap = [0.0; 2];
            for (slot, y) in [(0, Label::Goodware), (1, Label::Malware)] {
                let mut d = fit.clone();
                d.push((x, y));
                let model = detector::train(&d, input.train)?;
                let s = model.score_all(&eval_x)?;
                ap[slot] = average_precision(&s, &eval_y).expect("evaluation split holds both classes");
            }
            Ok((1.0 - f) * ap[0] + f * ap[1])
        })
        .collect::<Result<_, _>>()?;

    let order = top_k_desc(&utilities, k);
    let mut selected: Vec<usize> = order.iter().map(|&o| candidates[o]).collect();
    if k > candidates.len() {
        let mut in_pool = vec![false; n];
        for &c in &candidates {
            in_pool[c] = true;
        }
        let rest: Vec<usize> = (0..n).filter(|&i| !in_pool[i]).collect();
        let mut rng = seed::rng(seed, &[tag::ACTIVE, 4]);
        let fill = index::sample(&mut rng, rest.len(), k - candidates.len());
        selected.extend(fill.into_iter().map(|j| rest[j]));
    }
    Ok(SelectionResult {
        selected,
        utilities: candidates.into_iter().zip(utilities).collect(),
        k,
    })
}
