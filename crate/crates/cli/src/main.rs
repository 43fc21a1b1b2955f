//! `driftbench`: generate streams, run retraining grids, diagnose drift and
//! tabulate results.
//!
//! Exit status is 0 on success, 2 for usage or configuration problems and 1
//! when a component fails on valid input.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context as _;
use clap::{Parser, Subcommand};
use driftbench_core::runner::{self, CorrelationOutcome};

#[derive(Parser)]
#[command(name = "driftbench", version, about = "Label-efficient retraining under temporal drift")]
struct Cli {
    /// Override the seed of the synthetic config or of every experiment.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic stream in corpus format.
    Gen {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Run every config of a run spec.
    Run {
        #[arg(short, long)]
        spec: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        /// Also write per-step wall-clock timings (not deterministic).
        #[arg(long)]
        timings: bool,
    },
    /// Compute stability series and their correlation with F1.
    Drift {
        #[arg(short, long)]
        results: PathBuf,
    },
    /// Aggregate step logs into tables and curves.
    Report {
        #[arg(short, long)]
        results: PathBuf,
    },
}

enum Failure {
    Usage(anyhow::Error),
    Component(anyhow::Error),
}

type Outcome = Result<(), Failure>;

fn usage<T>(r: driftbench_core::Result<T>) -> Result<T, Failure> {
    r.map_err(|e| Failure::Usage(e.into()))
}

fn component<T>(r: driftbench_core::Result<T>) -> Result<T, Failure> {
    r.map_err(|e| Failure::Component(e.into()))
}

fn gen(config: &Path, out: &Path, seed: Option<u64>) -> Outcome {
    let (manifest, stream) = usage(runner::gen(config, out, seed))?;
    let priors: Vec<String> = stream
        .batches()
        .map(|b| {
            let m = b.samples.iter().filter(|s| s.true_label.is_some_and(|y| y.is_malware())).count();
            format!("{:.3}", m as f64 / b.samples.len().max(1) as f64)
        })
        .collect();
    println!("manifest: {}", manifest.display());
    println!("T = {}, d = {}", stream.steps(), stream.dim);
    println!("malware prior per period: {}", priors.join(" "));
    Ok(())
}

fn run(spec: &Path, out: &Path, seed: Option<u64>, timings: bool) -> Outcome {
    let loaded = usage(runner::load_run(spec, seed))?;
    let pool = usage(runner::thread_pool())?;
    let outcome = component(pool.install(|| runner::execute(&loaded, out, timings)))?;
    for key in &outcome.completed {
        println!("ok      {key}");
    }
    for f in &outcome.failures {
        eprintln!("failed  {}: {}", f.key, f.error);
    }
    if outcome.failures.is_empty() {
        Ok(())
    } else {
        Err(Failure::Component(anyhow::anyhow!(
            "{} of {} configs failed; see failures.json",
            outcome.failures.len(),
            outcome.failures.len() + outcome.completed.len()
        )))
    }
}

fn describe(c: &CorrelationOutcome) -> String {
    match c {
        CorrelationOutcome::Ok(r) => format!(
            "n = {}, r = {:.4} (p = {:.4}), tau = {:.4} (p = {:.4})",
            r.n, r.pearson_r, r.p_r, r.kendall_tau, r.p_tau
        ),
        CorrelationOutcome::Err { error } => format!("unavailable: {error}"),
    }
}

fn drift(results: &Path) -> Outcome {
    usage(runner::load_results_spec(results))?;
    let pool = usage(runner::thread_pool())?;
    let out = component(pool.install(|| runner::drift(results)))?;
    for (key, steps) in &out.series {
        println!("beta series  {key}: {} steps", steps.len());
    }
    for (key, c) in &out.per_config {
        if let CorrelationOutcome::Err { error } = c {
            eprintln!("correlation  {key}: {error}");
        }
    }
    if matches!(out.pooled, CorrelationOutcome::Err { .. }) {
        eprintln!("pooled correlation {}", describe(&out.pooled));
    } else {
        println!("pooled correlation {}", describe(&out.pooled));
    }
    Ok(())
}

fn report(results: &Path) -> Outcome {
    usage(runner::load_results_spec(results))?;
    let rows = component(runner::report(results))?;
    let table = results.join("report").join("table.txt");
    let text = std::fs::read_to_string(&table)
        .with_context(|| format!("reading {}", table.display()))
        .map_err(Failure::Component)?;
    print!("{text}");
    if rows.is_empty() {
        eprintln!("no completed result sets");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let r = match &cli.command {
        Command::Gen { config, out } => gen(config, out, cli.seed),
        Command::Run { spec, out, timings } => run(spec, out, cli.seed, *timings),
        Command::Drift { results } => drift(results),
        Command::Report { results } => report(results),
    };
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Component(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
