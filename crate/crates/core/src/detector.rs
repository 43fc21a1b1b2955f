//! The shipped detector: L2-regularised logistic regression fit by
//! deterministic full-batch gradient descent, plus Platt scaling and
//! fixed-FPR thresholding.
//!
//! Objective, with per-sample class weights `c_i` (1, or `n / (2·n_class)`
//! under balanced weighting):
//!
//! ```text
//! L(w, b) = (1/n) Σ_i c_i · ℓ(y_i, w·x_i + b) + (λ/2)·‖w‖²
//! ```
//!
//! The bias is not regularised. Gradients are accumulated over fixed-size
//! chunks and the chunk partials are summed in index order, so parameters
//! are bit-identical for any thread count.

use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{Label, SparseVector, UnlabeledView};
use crate::error::{Error, Result};

#[derive(Debug, Error, PartialEq)]
pub enum DetectorError {
    #[error("empty training set")]
    EmptyTrainingSet,
    #[error("degenerate class distribution")]
    DegenerateClasses,
    #[error("dimension mismatch: model has {expected}, input has {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("Platt scaling needs both classes and at least 4 scores")]
    PlattInput,
    #[error("non-finite score")]
    NonFinite,
    #[error("lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("FPR threshold needs at least one goodware score")]
    EmptyScores,
    #[error("FPR target {0} not in (0, 1]")]
    BadTarget(f64),
    #[error("no external score for sample {0}")]
    MissingScore(String),
    #[error("external score {0} outside [0, 1] and no calibration given")]
    UncalibratedScore(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassWeighting {
    #[default]
    None,
    Balanced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub l2_lambda: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub class_weighting: ClassWeighting,
    /// Recorded with the model. Full-batch descent from zero is
    /// deterministic and draws nothing from it.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            l2_lambda: 1e-4,
            learning_rate: 0.5,
            epochs: 200,
            class_weighting: ClassWeighting::None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), DetectorError> {
        if !(self.l2_lambda.is_finite() && self.l2_lambda >= 0.0) {
            return Err(DetectorError::InvalidConfig("l2_lambda must be finite and non-negative".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(DetectorError::InvalidConfig("learning_rate must be finite and positive".into()));
        }
        if self.epochs == 0 {
            return Err(DetectorError::InvalidConfig("epochs must be positive".into()));
        }
        Ok(())
    }
}

/// Platt map `s ↦ 1 / (1 + exp(A·s + B))` over raw decision values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Platt {
    pub a: f64,
    pub b: f64,
}

impl Platt {
    pub fn apply(&self, s: f64) -> f64 {
        let z = self.a * s + self.b;
        // Split on sign for accuracy in both tails.
        if z >= 0.0 {
            let e = (-z).exp();
            e / (1.0 + e)
        } else {
            1.0 / (1.0 + z.exp())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    /// When present, replaces the logistic link on the raw decision value.
    pub calibration: Option<Platt>,
    pub train_config: TrainConfig,
    pub threshold: Option<f64>,
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// `∂ℓ/∂z = σ(z) − y`, evaluated so that flipping `y` and negating `z`
/// negates the result exactly.
#[inline]
fn residual(z: f64, y: Label) -> f64 {
    match y {
        Label::Malware => -sigmoid(-z),
        Label::Goodware => sigmoid(z),
    }
}

/// Log-loss `−log σ(z)` for malware, `−log(1 − σ(z))` for goodware.
#[inline]
fn log_loss(z: f64, y: Label) -> f64 {
    let m = match y {
        Label::Malware => -z,
        Label::Goodware => z,
    };
    m.max(0.0) + (-m.abs()).exp().ln_1p()
}

const CHUNK: usize = 2048;

impl DetectorModel {
    pub fn zeros(dim: usize, train_config: TrainConfig) -> Self {
        DetectorModel {
            weights: vec![0.0; dim],
            bias: 0.0,
            calibration: None,
            train_config,
            threshold: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    /// Raw decision value `w·x + b`.
    pub fn decision(&self, x: &SparseVector) -> Result<f64, DetectorError> {
        if x.dim() != self.dim() {
            return Err(DetectorError::DimensionMismatch {
                expected: self.dim(),
                got: x.dim(),
            });
        }
        Ok(x.dot(&self.weights) + self.bias)
    }

    /// Malware probability in `[0, 1]`.
    pub fn score(&self, x: &SparseVector) -> Result<f64, DetectorError> {
        let s = self.decision(x)?;
        Ok(match &self.calibration {
            Some(p) => p.apply(s),
            None => sigmoid(s),
        })
    }

    pub fn score_all(&self, xs: &[&SparseVector]) -> Result<Vec<f64>, DetectorError> {
        xs.par_iter().map(|x| self.score(x)).collect()
    }

    pub fn decisions(&self, xs: &[&SparseVector]) -> Result<Vec<f64>, DetectorError> {
        xs.par_iter().map(|x| self.decision(x)).collect()
    }

    /// Fit Platt scaling on this model's decision values over `data`.
    pub fn calibrate(&mut self, data: &[(&SparseVector, Label)]) -> Result<Platt, DetectorError> {
        let raw: Vec<f64> = data.iter().map(|(x, _)| self.decision(x)).collect::<Result<_, _>>()?;
        let labels: Vec<Label> = data.iter().map(|(_, y)| *y).collect();
        let p = fit_platt(&raw, &labels)?;
        self.calibration = Some(p);
        Ok(p)
    }

    pub fn with_threshold(mut self, tau: f64) -> Self {
        self.threshold = Some(tau);
        self
    }

    /// Decision under the strict rule `f(x) > τ`; an unset threshold means 0.5.
    pub fn predict(&self, x: &SparseVector) -> Result<Label, DetectorError> {
        Ok(Label::from_bool(self.score(x)? > self.threshold.unwrap_or(0.5)))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::format(path, e))
    }

    /// SHA-256 of the JSON checkpoint, hex-encoded.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }
}

/// Fit the logistic detector on `data` from zero initialisation.
pub fn train(data: &[(&SparseVector, Label)], cfg: &TrainConfig) -> Result<DetectorModel, DetectorError> {
    train_traced(data, cfg).map(|(m, _)| m)
}

/// As [`train`], also returning the objective value at the start of every
/// epoch.
pub fn train_traced(
    data: &[(&SparseVector, Label)],
    cfg: &TrainConfig,
) -> Result<(DetectorModel, Vec<f64>), DetectorError> {
    cfg.validate()?;
    let first = data.first().ok_or(DetectorError::EmptyTrainingSet)?;
    let dim = first.0.dim();
    if let Some((x, _)) = data.iter().find(|(x, _)| x.dim() != dim) {
        return Err(DetectorError::DimensionMismatch {
            expected: dim,
            got: x.dim(),
        });
    }
    let n = data.len();
    let n_mal = data.iter().filter(|(_, y)| y.is_malware()).count();
    let n_good = n - n_mal;
    let (w_good, w_mal) = match cfg.class_weighting {
        ClassWeighting::None => (1.0, 1.0),
        ClassWeighting::Balanced => {
            if n_mal == 0 || n_good == 0 {
                return Err(DetectorError::DegenerateClasses);
            }
            (n as f64 / (2.0 * n_good as f64), n as f64 / (2.0 * n_mal as f64))
        }
    };
    let weight = |y: Label| if y.is_malware() { w_mal } else { w_good };

    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    let mut trace = Vec::with_capacity(cfg.epochs);
    let inv_n = 1.0 / n as f64;
    for _ in 0..cfg.epochs {
        let partials: Vec<(Vec<f64>, f64, f64)> = data
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut g = vec![0.0; dim];
                let (mut gb, mut loss) = (0.0, 0.0);
                for (x, y) in chunk {
                    let z = x.dot(&w) + b;
                    let c = weight(*y);
                    let r = c * residual(z, *y);
                    for (j, v) in x.iter() {
                        g[j] += r * v;
                    }
                    gb += r;
                    loss += c * log_loss(z, *y);
                }
                (g, gb, loss)
            })
            .collect();
        let mut grad = vec![0.0; dim];
        let (mut gb, mut loss) = (0.0, 0.0);
        for (g, pb, pl) in &partials {
            for (acc, v) in grad.iter_mut().zip(g) {
                *acc += v;
            }
            gb += pb;
            loss += pl;
        }
        let reg: f64 = w.iter().map(|v| v * v).sum::<f64>();
        trace.push(loss * inv_n + 0.5 * cfg.l2_lambda * reg);
        for (wj, gj) in w.iter_mut().zip(&grad) {
            *wj -= cfg.learning_rate * (gj * inv_n + cfg.l2_lambda * *wj);
        }
        b -= cfg.learning_rate * gb * inv_n;
    }
    let model = DetectorModel {
        weights: w,
        bias: b,
        calibration: None,
        train_config: cfg.clone(),
        threshold: None,
    };
    Ok((model, trace))
}

/// Platt scaling by Newton's method with backtracking line search on the
/// smoothed-target cross-entropy.
pub fn fit_platt(raw_scores: &[f64], labels: &[Label]) -> Result<Platt, DetectorError> {
    if raw_scores.len() != labels.len() {
        return Err(DetectorError::LengthMismatch(raw_scores.len(), labels.len()));
    }
    if raw_scores.iter().any(|s| !s.is_finite()) {
        return Err(DetectorError::NonFinite);
    }
    let n_pos = labels.iter().filter(|y| y.is_malware()).count();
    let n_neg = labels.len() - n_pos;
    if labels.len() < 4 || n_pos == 0 || n_neg == 0 {
        return Err(DetectorError::PlattInput);
    }
    let hi = (n_pos as f64 + 1.0) / (n_pos as f64 + 2.0);
    let lo = 1.0 / (n_neg as f64 + 2.0);
    let targets: Vec<f64> = labels.iter().map(|y| if y.is_malware() { hi } else { lo }).collect();

    let objective = |a: f64, b: f64| -> f64 {
        raw_scores
            .iter()
            .zip(&targets)
            .map(|(&s, &t)| {
                let f = s * a + b;
                if f >= 0.0 {
                    t * f + (-f).exp().ln_1p()
                } else {
                    (t - 1.0) * f + f.exp().ln_1p()
                }
            })
            .sum()
    };

    const MAX_ITER: usize = 100;
    const MIN_STEP: f64 = 1e-10;
    const SIGMA: f64 = 1e-12;
    const GRAD_TOL: f64 = 1e-8;

    let mut a = 0.0;
    let mut b = ((n_neg as f64 + 1.0) / (n_pos as f64 + 1.0)).ln();
    let mut fval = objective(a, b);
    for _ in 0..MAX_ITER {
        let (mut h11, mut h22, mut h21, mut g1, mut g2) = (SIGMA, SIGMA, 0.0, 0.0, 0.0);
        for (&s, &t) in raw_scores.iter().zip(&targets) {
            let f = s * a + b;
            // p = P(malware | s), q = 1 − p.
            let (p, q) = if f >= 0.0 {
                let e = (-f).exp();
                (e / (1.0 + e), 1.0 / (1.0 + e))
            } else {
                let e = f.exp();
                (1.0 / (1.0 + e), e / (1.0 + e))
            };
            let d2 = p * q;
            h11 += s * s * d2;
            h22 += d2;
            h21 += s * d2;
            let d1 = t - p;
            g1 += s * d1;
            g2 += d1;
        }
        if (g1 * g1 + g2 * g2).sqrt() <= GRAD_TOL {
            break;
        }
        let det = h11 * h22 - h21 * h21;
        let da = -(h22 * g1 - h21 * g2) / det;
        let db = -(-h21 * g1 + h11 * g2) / det;
        let gd = g1 * da + g2 * db;
        let mut step = 1.0;
        let mut accepted = false;
        while step >= MIN_STEP {
            let (na, nb) = (a + step * da, b + step * db);
            let nf = objective(na, nb);
            if nf < fval + 1e-4 * step * gd {
                a = na;
                b = nb;
                fval = nf;
                accepted = true;
                break;
            }
            step /= 2.0;
        }
        if !accepted {
            break;
        }
    }
    Ok(Platt { a, b })
}

/// Smallest `τ` among the observed scores and 0 such that the fraction of
/// scores strictly above `τ` is at most `fpr_target`.
pub fn threshold_at_fpr(goodware_scores: &[f64], fpr_target: f64) -> Result<f64, DetectorError> {
    if goodware_scores.is_empty() {
        return Err(DetectorError::EmptyScores);
    }
    if !(fpr_target > 0.0 && fpr_target <= 1.0) {
        return Err(DetectorError::BadTarget(fpr_target));
    }
    if goodware_scores.iter().any(|s| !s.is_finite()) {
        return Err(DetectorError::NonFinite);
    }
    let mut sorted = goodware_scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let feasible = |c: f64| {
        let at_or_below = sorted.partition_point(|&s| s <= c);
        ((n - at_or_below) as f64 / n as f64) <= fpr_target
    };
    let mut candidates = Vec::with_capacity(n + 1);
    candidates.push(0.0);
    candidates.extend_from_slice(&sorted);
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    Ok(*candidates
        .iter()
        .find(|&&c| feasible(c))
        .expect("the largest observed score is always feasible"))
}

/// Pluggable source of malware scores for a batch; every query and
/// pseudo-labeling strategy consumes scores through this interface.
pub trait BatchScorer {
    fn score_batch(&self, batch: UnlabeledView<'_>) -> Result<Vec<f64>, DetectorError>;
}

impl BatchScorer for DetectorModel {
    fn score_batch(&self, batch: UnlabeledView<'_>) -> Result<Vec<f64>, DetectorError> {
        self.score_all(&batch.all_features())
    }
}

/// Scores produced by an external detector, read from `<sample id> <raw
/// score>` lines. Raw scores are mapped through `calibration` when given
/// and must otherwise already lie in `[0, 1]`.
#[derive(Debug, Clone, Default)]
pub struct ExternalScores {
    pub raw: HashMap<String, f64>,
    pub calibration: Option<Platt>,
}

impl ExternalScores {
    pub fn parse(text: &str) -> Result<Self, crate::corpus::CorpusError> {
        use crate::corpus::CorpusError::Parse;
        let mut raw = HashMap::new();
        for (n, line) in text.lines().enumerate() {
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let perr = |m: &str| Parse {
                line: n + 1,
                message: m.to_string(),
            };
            let mut it = t.split_whitespace();
            let id = it.next().ok_or_else(|| perr("missing id"))?;
            let v: f64 = it
                .next()
                .ok_or_else(|| perr("missing score"))?
                .parse()
                .map_err(|_| perr("bad score"))?;
            if !v.is_finite() || it.next().is_some() {
                return Err(perr("expected `<id> <finite score>`"));
            }
            if raw.insert(id.to_string(), v).is_some() {
                return Err(perr("duplicate id"));
            }
        }
        Ok(ExternalScores { raw, calibration: None })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::format(path, e))
    }

    pub fn with_calibration(mut self, p: Platt) -> Self {
        self.calibration = Some(p);
        self
    }
}

impl BatchScorer for ExternalScores {
    fn score_batch(&self, batch: UnlabeledView<'_>) -> Result<Vec<f64>, DetectorError> {
        (0..batch.len())
            .map(|i| {
                let id = batch.id(i);
                let s = *self.raw.get(id).ok_or_else(|| DetectorError::MissingScore(id.to_string()))?;
                match &self.calibration {
                    Some(p) => Ok(p.apply(s)),
                    None if (0.0..=1.0).contains(&s) => Ok(s),
                    None => Err(DetectorError::UncalibratedScore(s)),
                }
            })
            .collect()
    }
}
