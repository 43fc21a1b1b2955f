//! Run specs, results directories, and the drift and report passes
//! over them.
//!
//! Layout of a results directory:
//!
//! ```text
//! runspec.normalized.json
//! summary.csv
//! failures.json                      only when a config failed
//! <config key>/config.json
//! <config key>/steps.jsonl
//! <config key>/audit.jsonl
//! <config key>/checkpoints/step_XXX.json
//! <config key>/trainsets/step_XXX.jsonl
//! <config key>/drift/…               written by the drift pass
//! drift/…, report/…
//! ```
//!
//! Every file is written through [`write_atomic`]. Outputs contain no
//! timestamps or timings unless explicitly requested, so identical inputs
//! give byte-identical directories.

use std::collections::HashSet;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::active::{ALConfig, Strategy};
use crate::corpus::{self, Label, SparseVector, TemporalStream};
use crate::detector::TrainConfig;
use crate::driftstat::{self, CorrelationReport, StepStability};
use crate::error::{Error, Result};
use crate::metrics::mean_present;
use crate::pipeline::{self, ExperimentConfig, ExperimentRun, History, LabeledEntry, Policy, StepLog};
use crate::semisup::{SSLConfig, SslStrategy};
use crate::synthdrift::{self, SynthConfig};

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "DRIFTBENCH_THREADS";

/// Write `bytes` to `path` via a sibling temporary file and a rename.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    let mut s = String::new();
    for it in items {
        s.push_str(&serde_json::to_string(&it).expect("serializable"));
        s.push('\n');
    }
    write_atomic(path, s.as_bytes())
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    read_text(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::format(path, e)))
        .collect()
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(|e| Error::format(path, e))?;
    for r in rows {
        w.write_record(r).map_err(|e| Error::format(path, e))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::format(path, e))?;
    write_atomic(path, &bytes)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// A rayon pool sized by `DRIFTBENCH_THREADS` (all cores when unset).
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let n = match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| Error::Config(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamSpec {
    /// Synthetic config file (TOML or JSON).
    #[serde(default)]
    pub synth: Option<PathBuf>,
    /// Corpus manifest.
    #[serde(default)]
    pub manifest: Option<PathBuf>,
    /// Keep only the `k` most frequent period-0 features.
    #[serde(default)]
    pub truncate: Option<usize>,
}

fn default_al_budgets() -> Vec<f64> {
    vec![0.01, 0.02, 0.05, 0.10]
}
fn default_ssl_budgets() -> Vec<f64> {
    vec![0.10, 0.20, 0.40, 0.80]
}
fn default_al_strategies() -> Vec<Strategy> {
    vec![Strategy::BADGE]
}
fn default_ssl_strategies() -> Vec<SslStrategy> {
    vec![SslStrategy::ST]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub policies: Vec<Policy>,
    #[serde(default = "default_al_strategies")]
    pub al_strategies: Vec<Strategy>,
    #[serde(default = "default_al_budgets")]
    pub al_budgets: Vec<f64>,
    #[serde(default = "default_ssl_strategies")]
    pub ssl_strategies: Vec<SslStrategy>,
    #[serde(default = "default_ssl_budgets")]
    pub ssl_budgets: Vec<f64>,
}

/// Settings shared by grid-generated configs and the NR/FL references.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Defaults {
    pub train: TrainConfig,
    pub fpr_target: f64,
    pub history: History,
    pub calibrate: bool,
    pub alpha: f64,
    pub eap_candidate_cap: usize,
}

impl Default for Defaults {
    fn default() -> Self {
        let c = ExperimentConfig::new(Policy::Nr);
        Defaults {
            train: c.train,
            fpr_target: c.fpr_target,
            history: c.history,
            calibrate: c.calibrate,
            alpha: c.alpha,
            eap_candidate_cap: ALConfig::new(Strategy::EAP, 0.0).eap_candidate_cap,
        }
    }
}

fn default_resamples() -> usize {
    driftstat::DEFAULT_RESAMPLES
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    #[serde(default)]
    pub seed: u64,
    pub stream: StreamSpec,
    #[serde(default)]
    pub defaults: Defaults,
    #[serde(default)]
    pub grid: Option<Grid>,
    #[serde(default)]
    pub configs: Vec<ExperimentConfig>,
    /// Permutation resamples for the drift correlation.
    #[serde(default = "default_resamples")]
    pub resamples: usize,
}

/// Stream source with paths resolved, as stored in the normalized spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResolvedSource {
    Synth(SynthConfig),
    Manifest(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyedConfig {
    pub key: String,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedRunSpec {
    pub seed: u64,
    pub source: ResolvedSource,
    pub truncate: Option<usize>,
    pub resamples: usize,
    pub configs: Vec<KeyedConfig>,
}

impl NormalizedRunSpec {
    pub fn load_stream(&self) -> Result<TemporalStream> {
        let stream = match &self.source {
            ResolvedSource::Synth(cfg) => synthdrift::generate_stream(cfg)?,
            ResolvedSource::Manifest(p) => corpus::load_manifest(p)?,
        };
        match self.truncate {
            Some(k) => Ok(corpus::truncate_features(&stream, k)?),
            None => Ok(stream),
        }
    }
}

/// `label-<12 hex digits of sha256(config JSON)>`.
pub fn config_key(cfg: &ExperimentConfig) -> String {
    let json = serde_json::to_string(cfg).expect("serializable");
    let h = hex::encode(Sha256::digest(json.as_bytes()));
    format!("{}-{}", cfg.label(), &h[..12])
}

impl RunSpec {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        toml::from_str(&text).map_err(|e| Error::format(path, e))
    }

    fn base_config(&self, policy: Policy) -> ExperimentConfig {
        let d = &self.defaults;
        ExperimentConfig {
            train: d.train.clone(),
            fpr_target: d.fpr_target,
            history: d.history,
            calibrate: d.calibrate,
            alpha: d.alpha,
            seed: self.seed,
            ..ExperimentConfig::new(policy)
        }
    }

    fn al(&self, s: Strategy, b: f64) -> ALConfig {
        ALConfig {
            eap_candidate_cap: self.defaults.eap_candidate_cap,
            ..ALConfig::new(s, b)
        }
    }

    /// Explicit configs, then the grid, then NR and FL if absent; every
    /// config takes the run-spec seed. Duplicates are dropped.
    pub fn expand(&self) -> Vec<ExperimentConfig> {
        let mut out: Vec<ExperimentConfig> = self
            .configs
            .iter()
            .map(|c| ExperimentConfig {
                seed: self.seed,
                ..c.clone()
            })
            .collect();
        if let Some(g) = &self.grid {
            for &p in &g.policies {
                let base = self.base_config(p);
                match p {
                    Policy::Nr | Policy::Fl => out.push(base),
                    Policy::AlOnly => {
                        for &s in &g.al_strategies {
                            for &b in &g.al_budgets {
                                out.push(base.clone().with_al(self.al(s, b)));
                            }
                        }
                    }
                    Policy::SslOnly => {
                        for &s in &g.ssl_strategies {
                            for &b in &g.ssl_budgets {
                                out.push(base.clone().with_ssl(SSLConfig::new(s, b)));
                            }
                        }
                    }
                    Policy::AlSsl => {
                        for &s in &g.al_strategies {
                            for &b in &g.al_budgets {
                                for &u in &g.ssl_strategies {
                                    for &v in &g.ssl_budgets {
                                        out.push(base.clone().with_al(self.al(s, b)).with_ssl(SSLConfig::new(u, v)));
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        for p in [Policy::Nr, Policy::Fl] {
            if !out.iter().any(|c| c.policy == p) {
                out.push(self.base_config(p));
            }
        }
        let mut seen = HashSet::new();
        out.retain(|c| seen.insert(config_key(c)));
        out
    }

    /// Resolve paths relative to `base` (the run spec's directory), validate
    /// every config and the stream source.
    pub fn normalize(&self, base: &Path) -> Result<NormalizedRunSpec> {
        let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        let source = match (&self.stream.synth, &self.stream.manifest) {
            (Some(s), None) => {
                let cfg = SynthConfig::from_path(resolve(s))?;
                cfg.validate()?;
                ResolvedSource::Synth(cfg)
            }
            (None, Some(m)) => {
                let p = resolve(m);
                if !p.is_file() {
                    return Err(Error::Config(format!("manifest {} not found", p.display())));
                }
                ResolvedSource::Manifest(fs::canonicalize(&p).map_err(|e| Error::io(&p, e))?)
            }
            _ => return Err(Error::Config("stream needs exactly one of `synth` or `manifest`".into())),
        };
        if self.stream.truncate == Some(0) {
            return Err(Error::Config("truncate must be positive".into()));
        }
        if let Some(g) = &self.grid {
            if g.al_budgets.iter().chain(&g.ssl_budgets).any(|b| !(0.0..=1.0).contains(b)) {
                return Err(Error::Config("grid budgets must lie in [0, 1]".into()));
            }
        }
        let configs = self.expand();
        for c in &configs {
            c.validate().map_err(|e| Error::Config(format!("{}: {e}", c.label())))?;
        }
        Ok(NormalizedRunSpec {
            seed: self.seed,
            source,
            truncate: self.stream.truncate,
            resamples: self.resamples,
            configs: configs
                .into_iter()
                .map(|config| KeyedConfig {
                    key: config_key(&config),
                    config,
                })
                .collect(),
        })
    }
}

/// A validated run ready to execute.
pub struct LoadedRun {
    pub spec: NormalizedRunSpec,
    pub stream: TemporalStream,
}

/// Load and validate a run spec and its stream. Every failure here is an
/// input problem.
pub fn load_run(spec_path: &Path, seed_override: Option<u64>) -> Result<LoadedRun> {
    let mut spec = RunSpec::from_path(spec_path)?;
    if let Some(s) = seed_override {
        spec.seed = s;
    }
    let base = spec_path.parent().unwrap_or(Path::new("."));
    let spec = spec.normalize(base)?;
    let stream = spec.load_stream()?;
    Ok(LoadedRun { spec, stream })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub key: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub completed: Vec<String>,
    pub failures: Vec<Failure>,
}

fn step_file(dir: &Path, sub: &str, t: usize, ext: &str) -> PathBuf {
    dir.join(sub).join(format!("step_{t:03}.{ext}"))
}

fn write_config_outputs(dir: &Path, cfg: &ExperimentConfig, run: &ExperimentRun, timings: bool) -> Result<()> {
    write_json(&dir.join("config.json"), cfg)?;
    write_jsonl(&dir.join("steps.jsonl"), &run.logs)?;
    write_jsonl(&dir.join("audit.jsonl"), &run.audit)?;
    if timings {
        write_jsonl(&dir.join("timing.jsonl"), &run.timings)?;
    }
    for (i, (model, set)) in run.models.iter().zip(&run.training_sets).enumerate() {
        let t = i + 1;
        write_atomic(step_file(dir, "checkpoints", t, "json"), model.to_json().as_bytes())?;
        write_jsonl(&step_file(dir, "trainsets", t, "jsonl"), set)?;
    }
    write_atomic(dir.join("checkpoints").join("final.json"), run.final_model.to_json().as_bytes())
}

const SUMMARY_HEADER: [&str; 16] = [
    "config", "policy", "al_strategy", "al_budget", "ssl_strategy", "ssl_budget", "t", "recall", "f1", "ap", "beta",
    "n_train", "n_al", "n_ssl", "oracle_total", "n_next",
];

fn summary_row(cfg: &ExperimentConfig, key: &str, l: &StepLog) -> Vec<String> {
    vec![
        key.to_string(),
        cfg.policy.name().to_string(),
        cfg.al.as_ref().map(|a| a.strategy.name().to_string()).unwrap_or_default(),
        cfg.al.as_ref().map(|a| a.budget_fraction.to_string()).unwrap_or_default(),
        cfg.ssl.as_ref().map(|s| format!("{:?}", s.strategy)).unwrap_or_default(),
        cfg.ssl.as_ref().map(|s| s.budget_fraction.to_string()).unwrap_or_default(),
        l.t.to_string(),
        opt(l.recall()),
        opt(l.f1()),
        opt(l.eval.as_ref().and_then(|e| e.ap)),
        opt(l.beta),
        l.n_train.to_string(),
        l.n_al.to_string(),
        l.n_ssl.to_string(),
        l.oracle_total.to_string(),
        l.n_next.to_string(),
    ]
}

/// Run every config of `loaded` and write the results directory. Configs
/// run in parallel; a failing config is recorded and does not stop the
/// others.
pub fn execute(loaded: &LoadedRun, out: &Path, timings: bool) -> Result<RunOutcome> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_json(&out.join("runspec.normalized.json"), &loaded.spec)?;
    let results: Vec<(usize, Result<Vec<StepLog>>)> = loaded
        .spec
        .configs
        .par_iter()
        .enumerate()
        .map(|(i, kc)| {
            let r = pipeline::run_experiment(&loaded.stream, &kc.config).and_then(|run| {
                write_config_outputs(&out.join(&kc.key), &kc.config, &run, timings)?;
                Ok(run.logs)
            });
            (i, r)
        })
        .collect();
    let mut rows = Vec::new();
    let mut completed = Vec::new();
    let mut failures = Vec::new();
    for (i, r) in results {
        let kc = &loaded.spec.configs[i];
        match r {
            Ok(logs) => {
                rows.extend(logs.iter().map(|l| summary_row(&kc.config, &kc.key, l)));
                completed.push(kc.key.clone());
            }
            Err(e) => failures.push(Failure {
                key: kc.key.clone(),
                error: e.to_string(),
            }),
        }
    }
    write_csv(&out.join("summary.csv"), &SUMMARY_HEADER, &rows)?;
    let fail_path = out.join("failures.json");
    if failures.is_empty() {
        if fail_path.exists() {
            fs::remove_file(&fail_path).map_err(|e| Error::io(&fail_path, e))?;
        }
    } else {
        write_json(&fail_path, &failures)?;
    }
    Ok(RunOutcome {
        dir: out.to_path_buf(),
        completed,
        failures,
    })
}

/// Load the normalized spec of a results directory.
pub fn load_results_spec(results: &Path) -> Result<NormalizedRunSpec> {
    let p = results.join("runspec.normalized.json");
    let text = read_text(&p)?;
    serde_json::from_str(&text).map_err(|e| Error::format(&p, e))
}

fn completed_configs(results: &Path, spec: &NormalizedRunSpec) -> Vec<KeyedConfig> {
    spec.configs
        .iter()
        .filter(|kc| results.join(&kc.key).join("steps.jsonl").is_file())
        .cloned()
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CorrelationOutcome {
    Ok(CorrelationReport),
    Err { error: String },
}

impl CorrelationOutcome {
    fn from(r: std::result::Result<CorrelationReport, driftstat::StatError>) -> Self {
        match r {
            Ok(c) => CorrelationOutcome::Ok(c),
            Err(e) => CorrelationOutcome::Err { error: e.to_string() },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriftOutcome {
    pub series: Vec<(String, Vec<StepStability>)>,
    pub pooled: CorrelationOutcome,
    pub per_config: Vec<(String, CorrelationOutcome)>,
}

fn feature_rows(s: &StepStability) -> Vec<Vec<String>> {
    let (Some(tr), Some(ts)) = (&s.train, &s.test) else {
        return Vec::new();
    };
    tr.features
        .iter()
        .zip(&ts.features)
        .enumerate()
        .map(|(j, (a, b))| {
            vec![
                j.to_string(),
                a.auc.to_string(),
                a.p.to_string(),
                a.a.to_string(),
                b.auc.to_string(),
                b.p.to_string(),
                b.a.to_string(),
                driftstat::stability_contribution(a.a, b.a).to_string(),
            ]
        })
        .collect()
}

/// Recompute β for every completed config from its stored training sets,
/// write per-config and pooled outputs, and correlate β with F1.
pub fn drift(results: &Path) -> Result<DriftOutcome> {
    let spec = load_results_spec(results)?;
    let stream = spec.load_stream()?;
    let configs = completed_configs(results, &spec);
    let mut series = Vec::new();
    let mut pooled_beta = Vec::new();
    let mut pooled_f1 = Vec::new();
    let mut per_config = Vec::new();
    let mut all_rows = Vec::new();
    for kc in &configs {
        let dir = results.join(&kc.key);
        let logs: Vec<StepLog> = read_jsonl(&dir.join("steps.jsonl"))?;
        let mut steps = Vec::with_capacity(logs.len());
        for l in &logs {
            let ck = step_file(&dir, "checkpoints", l.t, "json");
            if !ck.is_file() {
                return Err(Error::Config(format!("missing checkpoint {}", ck.display())));
            }
            let entries: Vec<LabeledEntry> = read_jsonl(&step_file(&dir, "trainsets", l.t, "jsonl"))?;
            let train = pipeline::training_pairs(&stream, &entries);
            let test: Vec<(&SparseVector, Label)> = stream
                .batch(l.t)
                .samples
                .iter()
                .filter_map(|s| s.true_label.map(|y| (&s.x, y)))
                .collect();
            steps.push(driftstat::step_stability(l.t, &train, &test, kc.config.alpha, false)?);
        }
        let (mut xb, mut yf) = (Vec::new(), Vec::new());
        let mut rows = Vec::new();
        for (s, l) in steps.iter().zip(&logs) {
            let c = s.stability.map(|x| x.counts);
            let row = vec![
                s.t.to_string(),
                opt(s.beta()),
                c.map(|c| c.preserved.to_string()).unwrap_or_default(),
                c.map(|c| c.flipped.to_string()).unwrap_or_default(),
                c.map(|c| c.half.to_string()).unwrap_or_default(),
                c.map(|c| c.both_null.to_string()).unwrap_or_default(),
                opt(l.f1()),
            ];
            let mut pooled_row = vec![kc.key.clone(), kc.config.policy.name().to_string()];
            pooled_row.extend(row.iter().cloned());
            all_rows.push(pooled_row);
            rows.push(row);
            if let (Some(b), Some(f)) = (s.beta(), l.f1()) {
                xb.push(b);
                yf.push(f);
            }
            write_csv(
                &dir.join("drift").join(format!("features_step_{:03}.csv", s.t)),
                &["j", "auc_train", "p_train", "a_train", "auc_test", "p_test", "a_test", "contribution"],
                &feature_rows(s),
            )?;
        }
        write_csv(
            &dir.join("drift").join("beta.csv"),
            &["t", "beta", "preserved", "flipped", "half", "both_null", "f1"],
            &rows,
        )?;
        per_config.push((kc.key.clone(), CorrelationOutcome::from(driftstat::correlate(&xb, &yf, spec.resamples, spec.seed))));
        pooled_beta.extend(xb);
        pooled_f1.extend(yf);
        series.push((kc.key.clone(), steps));
    }
    let pooled = CorrelationOutcome::from(driftstat::correlate(&pooled_beta, &pooled_f1, spec.resamples, spec.seed));
    let drift_dir = results.join("drift");
    write_csv(
        &drift_dir.join("beta_all.csv"),
        &["config", "policy", "t", "beta", "preserved", "flipped", "half", "both_null", "f1"],
        &all_rows,
    )?;
    write_json(&drift_dir.join("correlation_pooled.json"), &pooled)?;
    let per: Vec<serde_json::Value> = per_config
        .iter()
        .map(|(k, c)| serde_json::json!({ "config": k, "correlation": c }))
        .collect();
    write_json(&drift_dir.join("correlation_per_config.json"), &per)?;
    Ok(DriftOutcome {
        series,
        pooled,
        per_config,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub config: String,
    pub policy: Policy,
    pub al_strategy: Option<String>,
    pub al_budget: Option<f64>,
    pub ssl_strategy: Option<String>,
    pub ssl_budget: Option<f64>,
    pub mean_recall: Option<f64>,
    pub mean_f1: Option<f64>,
    pub steps: usize,
    pub steps_missing_f1: usize,
    pub recall_below_nr: bool,
    pub f1_below_nr: bool,
}

fn fmt_metric(v: Option<f64>) -> String {
    v.map(|x| format!("{:.4}", x)).unwrap_or_else(|| "-".into())
}

/// Aggregate step logs into the strategy × budget table and plot-ready
/// curves. Pure aggregation of logged fields.
pub fn report(results: &Path) -> Result<Vec<ReportRow>> {
    let spec = load_results_spec(results)?;
    let configs = completed_configs(results, &spec);
    let mut per: Vec<(KeyedConfig, Vec<StepLog>)> = Vec::new();
    for kc in configs {
        let logs = read_jsonl(&results.join(&kc.key).join("steps.jsonl"))?;
        per.push((kc, logs));
    }
    let mean = |logs: &[StepLog], f: fn(&StepLog) -> Option<f64>| mean_present(logs.iter().map(f));
    let nr = per.iter().find(|(kc, _)| kc.config.policy == Policy::Nr);
    let nr_recall = nr.and_then(|(_, l)| mean(l, StepLog::recall));
    let nr_f1 = nr.and_then(|(_, l)| mean(l, StepLog::f1));
    let below = |v: Option<f64>, base: Option<f64>| matches!((v, base), (Some(a), Some(b)) if a < b);
    let rows: Vec<ReportRow> = per
        .iter()
        .map(|(kc, logs)| {
            let (r, f) = (mean(logs, StepLog::recall), mean(logs, StepLog::f1));
            ReportRow {
                config: kc.key.clone(),
                policy: kc.config.policy,
                al_strategy: kc.config.al.as_ref().map(|a| a.strategy.name().to_string()),
                al_budget: kc.config.al.as_ref().map(|a| a.budget_fraction),
                ssl_strategy: kc.config.ssl.as_ref().map(|s| format!("{:?}", s.strategy)),
                ssl_budget: kc.config.ssl.as_ref().map(|s| s.budget_fraction),
                mean_recall: r,
                mean_f1: f,
                steps: logs.len(),
                steps_missing_f1: logs.iter().filter(|l| l.f1().is_none()).count(),
                recall_below_nr: kc.config.policy != Policy::Nr && below(r, nr_recall),
                f1_below_nr: kc.config.policy != Policy::Nr && below(f, nr_f1),
            }
        })
        .collect();

    let dir = results.join("report");
    let csv_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.config.clone(),
                r.policy.name().to_string(),
                r.al_strategy.clone().unwrap_or_default(),
                opt(r.al_budget),
                r.ssl_strategy.clone().unwrap_or_default(),
                opt(r.ssl_budget),
                opt(r.mean_recall),
                opt(r.mean_f1),
                r.steps.to_string(),
                r.steps_missing_f1.to_string(),
                r.recall_below_nr.to_string(),
                r.f1_below_nr.to_string(),
            ]
        })
        .collect();
    write_csv(
        &dir.join("table.csv"),
        &[
            "config", "policy", "al_strategy", "al_budget", "ssl_strategy", "ssl_budget", "mean_recall", "mean_f1",
            "steps", "steps_missing_f1", "recall_below_nr", "f1_below_nr",
        ],
        &csv_rows,
    )?;

    let mut text_rows = vec![[
        "config".to_string(),
        "policy".into(),
        "AL".into(),
        "SSL".into(),
        "recall".into(),
        "F1".into(),
    ]];
    for r in &rows {
        let mark = |v: Option<f64>, flag: bool| format!("{}{}", fmt_metric(v), if flag { "*" } else { "" });
        text_rows.push([
            r.config.clone(),
            r.policy.name().into(),
            match (&r.al_strategy, r.al_budget) {
                (Some(s), Some(b)) => format!("{s}@{b}"),
                _ => "-".into(),
            },
            match (&r.ssl_strategy, r.ssl_budget) {
                (Some(s), Some(b)) => format!("{s}@{b}"),
                _ => "-".into(),
            },
            mark(r.mean_recall, r.recall_below_nr),
            mark(r.mean_f1, r.f1_below_nr),
        ]);
    }
    let widths: Vec<usize> = (0..6).map(|c| text_rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0)).collect();
    let mut text = String::new();
    for r in &text_rows {
        let cells: Vec<String> = r.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        text.push_str(cells.join("  ").trim_end());
        text.push('\n');
    }
    text.push_str("\n* below the NR baseline\n");
    write_atomic(dir.join("table.txt"), text.as_bytes())?;

    let mut f1_rows = Vec::new();
    let mut beta_rows = Vec::new();
    for (kc, logs) in &per {
        for l in logs {
            f1_rows.push(vec![kc.key.clone(), kc.config.policy.name().to_string(), l.t.to_string(), opt(l.f1()), opt(l.recall())]);
            beta_rows.push(vec![kc.key.clone(), kc.config.policy.name().to_string(), l.t.to_string(), opt(l.beta)]);
        }
    }
    write_csv(&dir.join("f1_curves.csv"), &["config", "policy", "t", "f1", "recall"], &f1_rows)?;
    write_csv(&dir.join("beta_curves.csv"), &["config", "policy", "t", "beta"], &beta_rows)?;
    Ok(rows)
}

/// Generate a synthetic stream from a config file into `out`.
pub fn gen(config_path: &Path, out: &Path, seed_override: Option<u64>) -> Result<(PathBuf, TemporalStream)> {
    let mut cfg = SynthConfig::from_path(config_path)?;
    if let Some(s) = seed_override {
        cfg.seed = s;
    }
    let stream = synthdrift::generate_stream(&cfg)?;
    let manifest = corpus::write_stream(&stream, out)?;
    Ok((manifest, stream))
}
