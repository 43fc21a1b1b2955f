use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_driftbench"))
}

fn shipped_synth() -> String {
    fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/synth_default.toml")).unwrap()
}

/// The shipped scenario scaled down to `periods` periods of 400 samples.
fn small_synth(dir: &Path, periods: usize) -> PathBuf {
    let text = shipped_synth()
        .replace("samples_per_batch = 2000", "samples_per_batch = 400")
        .replace("periods = 11", &format!("periods = {periods}"))
        .replace("period = 4,", &format!("period = {},", (periods - 1).min(4)));
    let p = dir.join("synth.toml");
    fs::write(&p, text).unwrap();
    p
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().unwrap();
    assert!(
        out.status.success(),
        "status {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn json(p: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn spec(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("runspec.toml");
    fs::write(&p, format!("seed = 5\nresamples = 199\n\n[stream]\nsynth = \"synth.toml\"\n\n{body}")).unwrap();
    p
}

fn result_sets(results: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(results)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.join("steps.jsonl").is_file())
        .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    v.sort();
    v
}

#[test]
fn gen_default_config_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/synth_default.toml");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let out = run_ok(bin().args(["gen", "-c"]).arg(&cfg).arg("-o").arg(&a));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("T = 10, d = 50"), "{stdout}");
    run_ok(bin().args(["gen", "-c"]).arg(&cfg).arg("-o").arg(&b));
    let (ta, tb) = (tree(&a), tree(&b));
    assert!(ta.len() >= 12, "manifest plus 11 periods");
    assert_eq!(ta, tb);
    let c = tmp.path().join("c");
    run_ok(bin().args(["--seed", "9", "gen", "-c"]).arg(&cfg).arg("-o").arg(&c));
    assert_ne!(tree(&c), ta);
}

#[test]
fn gen_rejects_invalid_rates() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path().join("bad.toml");
    fs::write(&p, shipped_synth().replacen("p_mal = 0.1,", "p_mal = 1.5,", 1)).unwrap();
    let out = bin().args(["gen", "-c"]).arg(&p).arg("-o").arg(tmp.path().join("o")).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(bin().output().unwrap().status.code(), Some(2));
    assert_eq!(bin().args(["run", "-s"]).output().unwrap().status.code(), Some(2));
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nothing");
    for cmd in ["drift", "report"] {
        assert_eq!(bin().args([cmd, "-r"]).arg(&missing).output().unwrap().status.code(), Some(2));
    }
    assert_eq!(
        bin()
            .env("DRIFTBENCH_THREADS", "zero")
            .args(["run", "-s"])
            .arg(spec(tmp.path(), ""))
            .arg("-o")
            .arg(tmp.path().join("r"))
            .output()
            .unwrap()
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn missing_manifest_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path().join("runspec.toml");
    fs::write(&p, "[stream]\nmanifest = \"absent/manifest.json\"\n").unwrap();
    let out = bin().args(["run", "-s"]).arg(&p).arg("-o").arg(tmp.path().join("r")).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("manifest"));
}

#[test]
fn run_injects_references_and_is_idempotent() {
    let tmp = tempfile::tempdir().unwrap();
    small_synth(tmp.path(), 4);
    let s = spec(
        tmp.path(),
        "[grid]\npolicies = [\"AL_ONLY\"]\nal_strategies = [\"RS\", \"MS\", \"BADGE\"]\nal_budgets = [0.05]\n",
    );
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_ok(bin().args(["run", "-s"]).arg(&s).arg("-o").arg(&a));
    let sets = result_sets(&a);
    assert_eq!(sets.len(), 5, "{sets:?}");
    assert!(sets.iter().any(|k| k.starts_with("NR-")) && sets.iter().any(|k| k.starts_with("FL-")));
    run_ok(bin().env("DRIFTBENCH_THREADS", "1").args(["run", "-s"]).arg(&s).arg("-o").arg(&b));
    assert_eq!(fs::read(a.join("summary.csv")).unwrap(), fs::read(b.join("summary.csv")).unwrap());

    for dir in [&a, &b] {
        run_ok(bin().args(["drift", "-r"]).arg(dir));
        run_ok(bin().args(["report", "-r"]).arg(dir));
    }
    assert_eq!(tree(&a), tree(&b));
    // Rerunning into the same directory changes nothing.
    let before = tree(&a);
    run_ok(bin().args(["run", "-s"]).arg(&s).arg("-o").arg(&a));
    run_ok(bin().args(["drift", "-r"]).arg(&a));
    run_ok(bin().args(["report", "-r"]).arg(&a));
    assert_eq!(tree(&a), before);

    let table = fs::read_to_string(a.join("report/table.csv")).unwrap();
    assert_eq!(table.lines().count(), 1 + 5);
}

#[test]
fn seed_flag_overrides_experiment_seeds() {
    let tmp = tempfile::tempdir().unwrap();
    small_synth(tmp.path(), 3);
    let s = spec(tmp.path(), "");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_ok(bin().args(["run", "-s"]).arg(&s).arg("-o").arg(&a));
    run_ok(bin().args(["--seed", "6", "run", "-s"]).arg(&s).arg("-o").arg(&b));
    assert_ne!(result_sets(&a), result_sets(&b));
    let norm = fs::read_to_string(b.join("runspec.normalized.json")).unwrap();
    assert!(norm.contains("\"seed\": 6"));
}

#[test]
fn drift_on_references_gives_two_series_and_one_pooled_correlation() {
    let tmp = tempfile::tempdir().unwrap();
    small_synth(tmp.path(), 6);
    let r = tmp.path().join("r");
    run_ok(bin().args(["run", "-s"]).arg(spec(tmp.path(), "")).arg("-o").arg(&r));
    let out = run_ok(bin().args(["drift", "-r"]).arg(&r));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.matches("beta series").count(), 2, "{stdout}");
    assert_eq!(stdout.matches("pooled correlation").count(), 1);
    let pooled = json(&r.join("drift/correlation_pooled.json"));
    assert!(pooled.get("pearson_r").is_some(), "{pooled:?}");
    for k in result_sets(&r) {
        let beta = fs::read_to_string(r.join(&k).join("drift/beta.csv")).unwrap();
        assert_eq!(beta.lines().count(), 1 + 5);
        assert!(r.join(&k).join("drift/features_step_001.csv").is_file());
    }
}

#[test]
fn single_step_run_surfaces_correlation_error_and_keeps_beta() {
    let tmp = tempfile::tempdir().unwrap();
    small_synth(tmp.path(), 2);
    let r = tmp.path().join("r");
    run_ok(bin().args(["run", "-s"]).arg(spec(tmp.path(), "")).arg("-o").arg(&r));
    let out = run_ok(bin().args(["drift", "-r"]).arg(&r));
    assert!(String::from_utf8_lossy(&out.stderr).contains("correlation"));
    let pooled = json(&r.join("drift/correlation_pooled.json"));
    assert!(pooled.get("error").is_some());
    for k in result_sets(&r) {
        let beta = fs::read_to_string(r.join(&k).join("drift/beta.csv")).unwrap();
        assert_eq!(beta.lines().count(), 2);
    }
}

#[test]
fn drift_without_checkpoints_is_a_component_error() {
    let tmp = tempfile::tempdir().unwrap();
    small_synth(tmp.path(), 3);
    let r = tmp.path().join("r");
    run_ok(bin().args(["run", "-s"]).arg(spec(tmp.path(), "")).arg("-o").arg(&r));
    let k = result_sets(&r).remove(0);
    fs::remove_file(r.join(k).join("checkpoints/step_001.json")).unwrap();
    let out = bin().args(["drift", "-r"]).arg(&r).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("checkpoint"));
}

#[test]
fn failing_config_is_isolated_and_exits_1() {
    // One oracle label per step under a one-step window leaves a
    // single-class training set, which balanced weighting cannot fit.
    let tmp = tempfile::tempdir().unwrap();
    small_synth(tmp.path(), 3);
    let s = spec(
        tmp.path(),
        "[[configs]]\npolicy = \"AL_ONLY\"\nal = { strategy = \"RS\", budget_fraction = 0.0025 }\nhistory = { window = 1 }\n\
         train = { class_weighting = \"balanced\" }\n",
    );
    let r = tmp.path().join("r");
    let out = bin().args(["run", "-s"]).arg(&s).arg("-o").arg(&r).output().unwrap();
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    let failures = fs::read_to_string(r.join("failures.json")).unwrap();
    assert!(failures.contains("AL_ONLY-RS"));
    assert_eq!(result_sets(&r).len(), 2, "NR and FL still complete");
}

#[test]
fn report_table_flags_cells_below_nr() {
    let tmp = tempfile::tempdir().unwrap();
    small_synth(tmp.path(), 6);
    // Pseudo-labels from the stale model reinforce the pre-drift boundary.
    let s = spec(
        tmp.path(),
        "[[configs]]\npolicy = \"AL_ONLY\"\nal = { strategy = \"BADGE\", budget_fraction = 0.10 }\n\n\
         [[configs]]\npolicy = \"SSL_ONLY\"\nssl = { strategy = \"ST\", budget_fraction = 0.80 }\n",
    );
    let r = tmp.path().join("r");
    run_ok(bin().args(["run", "-s"]).arg(&s).arg("-o").arg(&r));
    let out = run_ok(bin().args(["report", "-r"]).arg(&r));
    let text = String::from_utf8(out.stdout).unwrap();

    let table = fs::read_to_string(r.join("report/table.csv")).unwrap();
    let rows: Vec<Vec<&str>> = table.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 4);
    let f1 = |row: &Vec<&str>| row[7].parse::<f64>().unwrap();
    let nr = rows.iter().find(|r| r[1] == "NR").unwrap();
    for row in &rows {
        let below = row[1] != "NR" && f1(row) < f1(nr);
        assert_eq!(row[11], below.to_string(), "{row:?}");
    }
    let ssl = rows.iter().find(|r| r[1] == "SSL_ONLY").unwrap();
    assert_eq!(ssl[11], "true", "the degraded run is flagged: {text}");
    assert!(text.contains('*'));
    assert!(r.join("report/f1_curves.csv").is_file() && r.join("report/beta_curves.csv").is_file());
}
