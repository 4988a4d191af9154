use std::fs;
use std::process::{Command, Output};

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pullback-optim"))
        .args(args)
        .env_remove("PULLBACK_OPTIM_THREADS")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn strip_wall_time(json: &str) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_str(json).unwrap();
    v.as_object_mut().unwrap().remove("wall_time_seconds");
    v
}

#[test]
fn bench_lowdim_prints_record() {
    let o = cli(&["bench-lowdim", "--landscape", "rosenbrock", "--optimizer", "im-sgd", "--eta", "0.01", "--xi", "0.5"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(v["config"]["optimizer"]["kind"], "im-sgd");
    assert_eq!(v["config"]["optimizer"]["xi"], 0.5);
    assert_eq!(v["converged"], true);
    let steps = v["iterations"].as_u64().unwrap();
    assert_eq!(v["trace"].as_array().unwrap().len() as u64, steps);
}

#[test]
fn same_arguments_same_output() {
    let args = ["bench-lowdim", "--landscape", "beale", "--optimizer", "adam", "--eta", "0.1", "--max-iters", "300"];
    let a = cli(&args);
    let b = cli(&args);
    assert_eq!(strip_wall_time(&stdout(&a)), strip_wall_time(&stdout(&b)));
}

#[test]
fn unknown_optimizer_exits_1_listing_kinds() {
    let o = cli(&["bench-lowdim", "--landscape", "rosenbrock", "--optimizer", "lion"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("optimizer"), "{err}");
    for kind in ["sgd", "adam-w", "im-sgd", "im-log-sgd", "im-rms"] {
        assert!(err.contains(kind), "{err}");
    }
}

#[test]
fn invalid_hyperparameter_names_field() {
    let o = cli(&["bench-lowdim", "--landscape", "beale", "--optimizer", "sgd", "--mu", "1.5"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("`mu`"), "{}", stderr(&o));

    let o = cli(&["bench-lowdim", "--landscape", "nowhere", "--optimizer", "sgd"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("landscape"));

    let o = cli(&["bench-lowdim", "--optimizer", "sgd"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.json");
    fs::write(
        &path,
        r#"{"landscape":"himmelblau","optimizer":{"kind":"sgd","eta":0.01,"mu":0.0},"max_iters":5}"#,
    )
    .unwrap();
    let p = path.to_str().unwrap();
    let o = cli(&["bench-lowdim", "--config", p, "--max-iters", "7", "--no-trace"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(v["config"]["max_iters"], 7);
    assert_eq!(v["iterations"], 7);
    assert_eq!(v["config"]["optimizer"]["eta"], 0.01);

    fs::write(&path, r#"{"landscape":"himmelblau","optimizer":{"kind":"sgd"},"colour":"red"}"#).unwrap();
    let o = cli(&["bench-lowdim", "--config", p]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("colour"), "{}", stderr(&o));

    let o = cli(&["bench-lowdim", "--config", "/nonexistent/run.json"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn train_nn_small_run() {
    let o = cli(&["train-nn", "--task", "blobs", "--optimizer", "adam", "--eta", "0.01", "--epochs", "3", "--no-trace"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(v["epochs"].as_array().unwrap().len(), 4);
    assert!(v["best_val_loss"].as_f64().unwrap() > 0.0);
}

#[test]
fn sweep_then_summarize() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = cli(&[
        "sweep", "--landscape", "himmelblau", "--optimizer", "sgd,im-sgd", "--mu", "0", "--max-iters", "500", "--out", out,
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let records = fs::read_to_string(dir.path().join("records.ndjson")).unwrap();
    // sgd: 5 η values; im-sgd: 5 η × 7 ξ. μ pinned by the flag.
    assert_eq!(records.lines().count(), 5 + 35);
    assert!(records.lines().all(|l| l.contains(r#""mu":0.0"#)));
    let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert!(summary.starts_with("optimizer,runs,"));
    assert_eq!(summary.lines().count(), 3);
    assert_eq!(stdout(&o), summary);

    let path = dir.path().join("records.ndjson");
    let o = cli(&["summarize", path.to_str().unwrap(), "--top-k", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rows: Vec<String> = stdout(&o).lines().map(String::from).collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[1].starts_with("sgd,3,"));
}

#[test]
fn summarize_missing_file_is_validation_error() {
    let o = cli(&["summarize", "/nonexistent/records.ndjson"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn selftest_passes() {
    let o = cli(&["selftest"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let out = stdout(&o);
    assert!(out.lines().count() >= 9);
    assert!(out.lines().all(|l| l.starts_with("PASS ")), "{out}");
}
