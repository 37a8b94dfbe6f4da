use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

use crashwatch::labeling::{read_returns_csv, var_threshold};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/synthetic").join(name)
}

fn crashwatch(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crashwatch")).args(args).env_remove("CRASHWATCH_SEED").output().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// The JSON status object from the last stderr line.
fn status(out: &Output) -> Value {
    let err = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(err.lines().last().expect("status line")).unwrap()
}

fn ok(out: Output) -> Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let s = status(&out);
    assert_eq!(s["status"], "ok");
    s
}

/// Feature panel, returns and labels for the fixture market.
fn staged(dir: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let config = fixture("experiment.json");
    let features = dir.join("features.csv");
    ok(crashwatch(&["features", "--config", p(&config), "--out", p(&features)]));
    let returns = dir.join("returns.csv");
    let labels = dir.join("labels.csv");
    ok(crashwatch(&["label", "--in", p(&returns), "--alpha", "0.05", "--out", p(&labels)]));
    (features, returns, labels)
}

#[test]
fn help_and_version_exit_zero() {
    for flag in ["--help", "--version"] {
        let out = crashwatch(&[flag]);
        assert_eq!(out.status.code(), Some(0));
        assert!(!out.stdout.is_empty());
    }
    assert_eq!(crashwatch(&["run", "--help"]).status.code(), Some(0));
}

#[test]
fn usage_errors_exit_one_with_status() {
    let out = crashwatch(&["run", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(1));
    let s = status(&out);
    assert_eq!(s["status"], "error");
    assert_eq!(s["kind"], "user");
}

#[test]
fn missing_input_is_a_user_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = crashwatch(&["label", "--in", "/nonexistent/returns.csv", "--out", p(&dir.path().join("l.csv"))]);
    assert_eq!(out.status.code(), Some(1));
    let s = status(&out);
    assert_eq!((s["command"].as_str(), s["kind"].as_str()), (Some("label"), Some("user")));
    assert!(s["error"].as_str().unwrap().contains("/nonexistent/returns.csv"));
}

#[test]
fn unknown_family_is_a_user_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture("experiment.json");
    let out = crashwatch(&["run", "--config", p(&config), "--family", "svm", "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn ingest_aligns_on_the_first_input() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("panel.csv");
    let s = ok(crashwatch(&["ingest", "--in", p(&fixture("SYNIDX.csv")), p(&fixture("WORLD.csv")), "--out", p(&out)]));
    let idx_rows = std::fs::read_to_string(fixture("SYNIDX.csv")).unwrap().lines().count() - 1;
    assert_eq!(s["dates"].as_u64().unwrap() as usize, idx_rows);
    let single = dir.path().join("one.csv");
    let s = ok(crashwatch(&["ingest", "--in", p(&fixture("SYNIDX.csv")), "--out", p(&single)]));
    assert_eq!(s["bars"].as_u64().unwrap() as usize, idx_rows);
}

#[test]
fn label_threshold_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let (_, returns, labels) = staged(dir.path());
    let (_, r) = read_returns_csv(&std::fs::read(&returns).unwrap()).unwrap();
    let out = crashwatch(&["label", "--in", p(&returns), "--alpha", "0.01", "--out", p(&labels)]);
    let s = ok(out);
    assert_eq!(s["threshold"].as_f64().unwrap(), var_threshold(&r, 0.01).unwrap());
    let crashes = r.iter().flatten().filter(|&&v| v < var_threshold(&r, 0.01).unwrap()).count();
    assert_eq!(s["crashes"].as_u64().unwrap() as usize, crashes);
}

#[test]
fn stage_chain_reproduces_the_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let (features, _, labels) = staged(dir.path());
    let config = fixture("experiment.json");
    let models = dir.path().join("models");
    let trained = ok(crashwatch(&["train", "--config", p(&config), "--family", "forest", "--out", p(&models)]));

    let tensor = dir.path().join("test.cwt");
    ok(crashwatch(&[
        "windows", "--in", p(&features), "--labels", p(&labels), "--from", "2020-01-01", "--to", "2023-12-31", "--out", p(&tensor),
    ]));
    let model = trained["model"].as_str().unwrap();
    let metrics = dir.path().join("metrics.json");
    ok(crashwatch(&["evaluate", "--model", model, "--in", p(&tensor), "--out", p(&metrics)]));
    let evaluated: Value = serde_json::from_str(&std::fs::read_to_string(&metrics).unwrap()).unwrap();
    for key in ["tp", "fp", "fn", "tn", "hit_rate", "bal_acc", "auc_prc"] {
        assert_eq!(evaluated[key], trained["metrics"][key], "{key}");
    }

    let run_dir = dir.path().join("run");
    ok(crashwatch(&["run", "--config", p(&config), "--family", "forest", "--out", p(&run_dir)]));
    let mut rdr = csv::Reader::from_path(run_dir.join("results_raw.csv")).unwrap();
    let h = rdr.headers().unwrap().clone();
    let col = |n: &str| h.iter().position(|x| x == n).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 2);
    let rep0 = rows.iter().find(|r| &r[col("run")] == "0").unwrap();
    assert_eq!(rep0[col("bal_acc")].parse::<f64>().unwrap(), evaluated["bal_acc"].as_f64().unwrap());
}

#[test]
fn plot_modes_agree() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture("experiment.json");
    let models = dir.path().join("models");
    let trained = ok(crashwatch(&["train", "--config", p(&config), "--family", "boost", "--out", p(&models)]));
    let model = trained["model"].as_str().unwrap();

    let first = dir.path().join("first");
    let s = ok(crashwatch(&["plot", "--model", model, "--config", p(&config), "--out", p(&first), "--title", "t"]));
    let rows = std::fs::read_to_string(first.with_extension("csv")).unwrap().lines().count() - 1;
    assert_eq!(s["points"].as_u64().unwrap() as usize, rows);

    let (features, _, labels) = staged(dir.path());
    let tensor = dir.path().join("all.cwt");
    let w = ok(crashwatch(&["windows", "--in", p(&features), "--labels", p(&labels), "--out", p(&tensor)]));
    assert_eq!(w["samples"].as_u64().unwrap() as usize, rows);

    let again = dir.path().join("again");
    ok(crashwatch(&["plot", "--in", p(&first.with_extension("csv")), "--out", p(&again), "--title", "t"]));
    assert_eq!(std::fs::read(first.with_extension("svg")).unwrap(), std::fs::read(again.with_extension("svg")).unwrap());
}

#[test]
fn seed_falls_back_to_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let (features, _, labels) = staged(dir.path());
    let tensor = dir.path().join("small.cwt");
    ok(crashwatch(&[
        "windows", "--in", p(&features), "--labels", p(&labels), "--from", "2012-01-01", "--to", "2013-12-31", "--out", p(&tensor),
    ]));
    let resample = |out: &Path, seed: Option<&str>, env: Option<&str>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_crashwatch"));
        cmd.args(["resample", "--in", p(&tensor), "--out", p(out)]).env_remove("CRASHWATCH_SEED");
        if let Some(s) = seed {
            cmd.args(["--seed", s]);
        }
        if let Some(e) = env {
            cmd.env("CRASHWATCH_SEED", e);
        }
        cmd.output().unwrap()
    };
    let (a, b, c) = (dir.path().join("a.csv"), dir.path().join("b.csv"), dir.path().join("c.csv"));
    ok(resample(&a, Some("5"), None));
    ok(resample(&b, None, Some("5")));
    ok(resample(&c, None, Some("6")));
    let read = |x: &Path| std::fs::read(x).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
    assert_eq!(resample(&c, None, Some("not-a-number")).status.code(), Some(1));
}
