//! Sparse records, period batches and the temporal stream abstraction.
//!
//! Record grammar, one sample per line (UTF-8, `#` starts a comment line):
//!
//! ```text
//! <id> <0|1|?> <timestamp> <idx>:<val> <idx>:<val> ...
//! ```
//!
//! Indices are 0-based and strictly ascending. A `?` label means the sample
//! carries no ground truth. Stored zero values are dropped on parse.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};

#[derive(Debug, Error, PartialEq)]
pub enum CorpusError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid sparse vector: {0}")]
    Vector(String),
    #[error("invalid stream: {0}")]
    Stream(String),
    #[error("no active features in period 0")]
    NoActiveFeatures,
    #[error("truncation size must be positive")]
    ZeroTruncation,
}

/// Class label: 0 is goodware, 1 is malware.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Label {
    Goodware,
    Malware,
}

impl Label {
    pub fn as_u8(self) -> u8 {
        match self {
            Label::Goodware => 0,
            Label::Malware => 1,
        }
    }

    pub fn as_f64(self) -> f64 {
        f64::from(self.as_u8())
    }

    pub fn flip(self) -> Label {
        match self {
            Label::Goodware => Label::Malware,
            Label::Malware => Label::Goodware,
        }
    }

    pub fn is_malware(self) -> bool {
        self == Label::Malware
    }

    /// Label implied by a decision `f ≥ threshold`.
    pub fn from_bool(malware: bool) -> Label {
        if malware {
            Label::Malware
        } else {
            Label::Goodware
        }
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        l.as_u8()
    }
}

impl TryFrom<u8> for Label {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, Self::Error> {
        match v {
            0 => Ok(Label::Goodware),
            1 => Ok(Label::Malware),
            other => Err(format!("label must be 0 or 1, got {other}")),
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_u8())
    }
}

/// Sparse real vector of fixed dimension with strictly increasing indices
/// and no stored zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseVector {
    dim: usize,
    indices: Vec<u32>,
    values: Vec<f64>,
}

impl SparseVector {
    /// Build from `(index, value)` pairs. Zero values are dropped; indices
    /// must be strictly ascending and below `dim`, values finite.
    pub fn new(dim: usize, entries: impl IntoIterator<Item = (usize, f64)>) -> Result<Self, CorpusError> {
        let mut indices = Vec::new();
        let mut values = Vec::new();
        let mut last: Option<usize> = None;
        for (idx, val) in entries {
            if idx >= dim {
                return Err(CorpusError::Vector(format!("index {idx} out of range for dimension {dim}")));
            }
            if let Some(prev) = last {
                if idx == prev {
                    return Err(CorpusError::Vector(format!("duplicate index {idx}")));
                }
                if idx < prev {
                    return Err(CorpusError::Vector(format!("indices not ascending ({prev} then {idx})")));
                }
            }
            if !val.is_finite() {
                return Err(CorpusError::Vector(format!("non-finite value at index {idx}")));
            }
            last = Some(idx);
            if val != 0.0 {
                indices.push(idx as u32);
                values.push(val);
            }
        }
        Ok(SparseVector { dim, indices, values })
    }

    pub fn zeros(dim: usize) -> Self {
        SparseVector {
            dim,
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn from_dense(values: &[f64]) -> Result<Self, CorpusError> {
        Self::new(values.len(), values.iter().copied().enumerate())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices.iter().map(|&i| i as usize).zip(self.values.iter().copied())
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, j: usize) -> f64 {
        match self.indices.binary_search(&(j as u32)) {
            Ok(pos) => self.values[pos],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (i, v) in self.iter() {
            out[i] = v;
        }
        out
    }

    /// Inner product with a dense vector of the same dimension.
    pub fn dot(&self, dense: &[f64]) -> f64 {
        debug_assert_eq!(dense.len(), self.dim);
        self.iter().map(|(i, v)| v * dense[i]).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    /// Elementwise multiple `c·x`; a zero factor yields the zero vector.
    pub fn scaled(&self, c: f64) -> SparseVector {
        if c == 0.0 {
            return SparseVector::zeros(self.dim);
        }
        SparseVector {
            dim: self.dim,
            indices: self.indices.clone(),
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }

    /// `x / ‖x‖₂`, or the vector itself when it is zero.
    pub fn normalized(&self) -> SparseVector {
        let n = self.norm_sq().sqrt();
        if n == 0.0 {
            self.clone()
        } else {
            self.scaled(1.0 / n)
        }
    }

    /// `‖self − other‖²` by a sorted merge.
    pub fn squared_distance(&self, other: &SparseVector) -> f64 {
        let (mut a, mut b) = (0, 0);
        let mut acc = 0.0;
        while a < self.indices.len() && b < other.indices.len() {
            let (ia, ib) = (self.indices[a], other.indices[b]);
            if ia == ib {
                let d = self.values[a] - other.values[b];
                acc += d * d;
                a += 1;
                b += 1;
            } else if ia < ib {
                acc += self.values[a] * self.values[a];
                a += 1;
            } else {
                acc += other.values[b] * other.values[b];
                b += 1;
            }
        }
        acc += self.values[a..].iter().map(|v| v * v).sum::<f64>();
        acc += other.values[b..].iter().map(|v| v * v).sum::<f64>();
        acc
    }

    /// Concatenate `self` and `other` into a vector of dimension
    /// `self.dim + other.dim`.
    pub fn concat(&self, other: &SparseVector) -> SparseVector {
        let offset = self.dim as u32;
        let mut indices = self.indices.clone();
        indices.extend(other.indices.iter().map(|i| i + offset));
        let mut values = self.values.clone();
        values.extend_from_slice(&other.values);
        SparseVector {
            dim: self.dim + other.dim,
            indices,
            values,
        }
    }

    /// Keep only features present in `map` (old index → new index), in the
    /// new index order.
    fn remap(&self, new_dim: usize, map: &[Option<u32>]) -> SparseVector {
        let mut entries: Vec<(u32, f64)> = self
            .iter()
            .filter_map(|(i, v)| map[i].map(|n| (n, v)))
            .collect();
        entries.sort_unstable_by_key(|&(n, _)| n);
        SparseVector {
            dim: new_dim,
            indices: entries.iter().map(|&(n, _)| n).collect(),
            values: entries.iter().map(|&(_, v)| v).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub x: SparseVector,
    pub timestamp: i64,
    pub true_label: Option<Label>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub period: usize,
    pub start_ts: i64,
    pub end_ts: i64,
    pub samples: Vec<Sample>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Label-stripped view handed to query and pseudo-labeling code.
    pub fn unlabeled(&self) -> UnlabeledView<'_> {
        UnlabeledView { batch: self }
    }
}

/// Read-only view of a batch that exposes features and ids but not labels.
#[derive(Debug, Clone, Copy)]
pub struct UnlabeledView<'a> {
    batch: &'a Batch,
}

impl<'a> UnlabeledView<'a> {
    pub fn period(&self) -> usize {
        self.batch.period
    }

    pub fn len(&self) -> usize {
        self.batch.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.batch.samples.is_empty()
    }

    pub fn features(&self, i: usize) -> &'a SparseVector {
        &self.batch.samples[i].x
    }

    pub fn id(&self, i: usize) -> &'a str {
        &self.batch.samples[i].id
    }

    pub fn all_features(&self) -> Vec<&'a SparseVector> {
        self.batch.samples.iter().map(|s| &s.x).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Granularity {
    Monthly,
    Quarterly,
    SyntheticStep,
}

/// Period 0 (fully labeled training data) followed by the incoming batches.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalStream {
    pub dim: usize,
    pub granularity: Granularity,
    pub initial: Batch,
    pub incoming: Vec<Batch>,
    /// New feature index → original feature index, when the stream was
    /// produced by [`truncate_features`].
    pub feature_map: Option<Vec<usize>>,
}

impl TemporalStream {
    /// Number of incoming batches `T`.
    pub fn steps(&self) -> usize {
        self.incoming.len()
    }

    pub fn batch(&self, t: usize) -> &Batch {
        if t == 0 {
            &self.initial
        } else {
            &self.incoming[t - 1]
        }
    }

    pub fn batches(&self) -> impl Iterator<Item = &Batch> {
        std::iter::once(&self.initial).chain(self.incoming.iter())
    }

    /// Check every structural invariant of the stream.
    pub fn validate(&self) -> Result<(), CorpusError> {
        let err = |m: String| Err(CorpusError::Stream(m));
        let mut ids = HashSet::new();
        let mut prev: Option<&Batch> = None;
        for (t, batch) in self.batches().enumerate() {
            if batch.period != t {
                return err(format!("batch {t} carries period {}", batch.period));
            }
            if batch.samples.is_empty() {
                return err(format!("period {t} is empty"));
            }
            if batch.start_ts > batch.end_ts {
                return err(format!("period {t} has start_ts > end_ts"));
            }
            if let Some(p) = prev {
                if batch.start_ts <= p.end_ts {
                    return err(format!("period {t} does not start after period {}", p.period));
                }
            }
            for s in &batch.samples {
                if s.x.dim() != self.dim {
                    return err(format!("sample {} has dimension {} (stream dimension {})", s.id, s.x.dim(), self.dim));
                }
                if s.timestamp < batch.start_ts || s.timestamp > batch.end_ts {
                    return err(format!("sample {} timestamp {} outside period {t} interval", s.id, s.timestamp));
                }
                if t == 0 && s.true_label.is_none() {
                    return err(format!("unlabeled sample {} in period 0", s.id));
                }
                if !ids.insert(s.id.as_str()) {
                    return err(format!("duplicate sample id {}", s.id));
                }
            }
            prev = Some(batch);
        }
        Ok(())
    }
}

/// Parse one data record. `line_no` is 1-based and only used in errors.
pub fn parse_sparse_record(line: &str, line_no: usize, dim: usize) -> Result<Sample, CorpusError> {
    let perr = |message: String| CorpusError::Parse { line: line_no, message };
    let mut tokens = line.split_whitespace();
    let id = tokens.next().ok_or_else(|| perr("empty record".into()))?;
    let label_tok = tokens.next().ok_or_else(|| perr("missing label".into()))?;
    let true_label = match label_tok {
        "0" => Some(Label::Goodware),
        "1" => Some(Label::Malware),
        "?" => None,
        other => return Err(perr(format!("bad label token {other:?}"))),
    };
    let ts_tok = tokens.next().ok_or_else(|| perr("missing timestamp".into()))?;
    let timestamp: i64 = ts_tok
        .parse()
        .map_err(|_| perr(format!("bad timestamp {ts_tok:?}")))?;
    let mut entries = Vec::new();
    for tok in tokens {
        let (i, v) = tok
            .split_once(':')
            .ok_or_else(|| perr(format!("malformed feature token {tok:?}")))?;
        let idx: usize = i.parse().map_err(|_| perr(format!("bad feature index in {tok:?}")))?;
        let val: f64 = v.parse().map_err(|_| perr(format!("bad feature value in {tok:?}")))?;
        entries.push((idx, val));
    }
    let x = SparseVector::new(dim, entries).map_err(|e| match e {
        CorpusError::Vector(m) => perr(m),
        other => other,
    })?;
    Ok(Sample {
        id: id.to_string(),
        x,
        timestamp,
        true_label,
    })
}

/// Canonical text form of a sample; inverse of [`parse_sparse_record`] up
/// to whitespace and dropped zeros.
pub fn format_record(sample: &Sample) -> String {
    use std::fmt::Write;
    let mut out = String::with_capacity(16 + 8 * sample.x.nnz());
    let label = sample.true_label.map_or("?".to_string(), |l| l.to_string());
    write!(out, "{} {} {}", sample.id, label, sample.timestamp).unwrap();
    for (i, v) in sample.x.iter() {
        write!(out, " {i}:{v}").unwrap();
    }
    out
}

/// Parse a whole batch file, skipping blank and `#` comment lines.
pub fn parse_records(text: &str, dim: usize) -> Result<Vec<Sample>, CorpusError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| {
            let t = l.trim();
            !t.is_empty() && !t.starts_with('#')
        })
        .map(|(n, l)| parse_sparse_record(l, n + 1, dim))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub dim: usize,
    pub granularity: Granularity,
    pub periods: Vec<ManifestPeriod>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestPeriod {
    pub t: usize,
    pub file: String,
    pub start_ts: i64,
    pub end_ts: i64,
}

/// Load and validate a stream from its JSON manifest. Data file paths are
/// resolved relative to the manifest's directory; periods are renumbered
/// `0..=T` in manifest order.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<TemporalStream> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::format(path, e))?;
    if manifest.periods.is_empty() {
        return Err(CorpusError::Stream("manifest lists no periods".into()).into());
    }
    if manifest.dim == 0 {
        return Err(CorpusError::Stream("dimension must be positive".into()).into());
    }
    for w in manifest.periods.windows(2) {
        if w[1].t <= w[0].t {
            return Err(CorpusError::Stream(format!("period {} listed after period {}", w[1].t, w[0].t)).into());
        }
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let mut batches = Vec::with_capacity(manifest.periods.len());
    for (t, p) in manifest.periods.iter().enumerate() {
        let file: PathBuf = base.join(&p.file);
        let text = std::fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
        let samples = parse_records(&text, manifest.dim).map_err(|e| Error::format(&file, e))?;
        batches.push(Batch {
            period: t,
            start_ts: p.start_ts,
            end_ts: p.end_ts,
            samples,
        });
    }
    let mut iter = batches.into_iter();
    let stream = TemporalStream {
        dim: manifest.dim,
        granularity: manifest.granularity,
        initial: iter.next().expect("non-empty"),
        incoming: iter.collect(),
        feature_map: None,
    };
    stream.validate()?;
    Ok(stream)
}

/// Write every period as a record file plus `manifest.json` under `dir`.
/// Returns the manifest path.
pub fn write_stream(stream: &TemporalStream, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut periods = Vec::new();
    for batch in stream.batches() {
        let file = format!("period_{:03}.svm", batch.period);
        let mut text = String::new();
        for s in &batch.samples {
            text.push_str(&format_record(s));
            text.push('\n');
        }
        crate::runner::write_atomic(dir.join(&file), text.as_bytes())?;
        periods.push(ManifestPeriod {
            t: batch.period,
            file,
            start_ts: batch.start_ts,
            end_ts: batch.end_ts,
        });
    }
    let manifest = Manifest {
        dim: stream.dim,
        granularity: stream.granularity,
        periods,
    };
    let path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    crate::runner::write_atomic(&path, json.as_bytes())?;
    Ok(path)
}

/// Keep the `k` features most frequently non-zero in period 0.
///
/// Features are re-indexed by descending frequency, ties broken by
/// ascending original index. Features never active in period 0 are
/// dropped even when `k` exceeds their count.
pub fn truncate_features(stream: &TemporalStream, k: usize) -> Result<TemporalStream, CorpusError> {
    if k == 0 {
        return Err(CorpusError::ZeroTruncation);
    }
    let mut freq = vec![0usize; stream.dim];
    for s in &stream.initial.samples {
        for &i in s.x.indices() {
            freq[i as usize] += 1;
        }
    }
    let mut order: Vec<usize> = (0..stream.dim).filter(|&j| freq[j] > 0).collect();
    if order.is_empty() {
        return Err(CorpusError::NoActiveFeatures);
    }
    order.sort_by(|&a, &b| freq[b].cmp(&freq[a]).then(a.cmp(&b)));
    order.truncate(k);
    let new_dim = order.len();
    let mut map = vec![None; stream.dim];
    for (new, &old) in order.iter().enumerate() {
        map[old] = Some(new as u32);
    }
    let remap_batch = |b: &Batch| Batch {
        period: b.period,
        start_ts: b.start_ts,
        end_ts: b.end_ts,
        samples: b
            .samples
            .iter()
            .map(|s| Sample {
                id: s.id.clone(),
                x: s.x.remap(new_dim, &map),
                timestamp: s.timestamp,
                true_label: s.true_label,
            })
            .collect(),
    };
    let original: Vec<usize> = match &stream.feature_map {
        Some(prev) => order.iter().map(|&j| prev[j]).collect(),
        None => order.clone(),
    };
    Ok(TemporalStream {
        dim: new_dim,
        granularity: stream.granularity,
        initial: remap_batch(&stream.initial),
        incoming: stream.incoming.iter().map(remap_batch).collect(),
        feature_map: Some(original),
    })
}
