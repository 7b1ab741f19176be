use std::path::Path;
use std::process::{Command, Output};

fn rekp(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rekp")).current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = rekp(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

/// Scene, a small dataset and a small pool in `dir`.
fn pipeline(dir: &Path, seed: &str) {
    ok(dir, &["--seed", seed, "-q", "scene-gen"]);
    ok(dir, &["--seed", seed, "-q", "simulate", "--realizations", "30"]);
    ok(dir, &["--seed", seed, "-q", "learn", "--trees", "20"]);
}

#[test]
fn scene_gen_reports_los_split() {
    let dir = tempfile::tempdir().unwrap();
    let text = ok(dir.path(), &["--seed", "7", "scene-gen"]);
    assert!(text.contains("11 LOS, 4 NLOS"), "{text}");
    let first = std::fs::read(dir.path().join("scene.json")).unwrap();
    ok(dir.path(), &["--seed", "7", "scene-gen"]);
    assert_eq!(std::fs::read(dir.path().join("scene.json")).unwrap(), first);
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(rekp(dir.path(), &["scene-gen", "--bogus"]).status.code(), Some(2));
    assert_eq!(rekp(dir.path(), &["--seed", "x", "scene-gen"]).status.code(), Some(2));
    assert_eq!(rekp(dir.path(), &["scene-gen"]).status.code(), Some(2));
    assert_eq!(rekp(dir.path(), &["simulate"]).status.code(), Some(2));
    assert_eq!(rekp(dir.path(), &["learn"]).status.code(), Some(2));
    assert_eq!(rekp(dir.path(), &[]).status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = rekp(dir.path(), &["--seed", "1", "simulate", "--scene", "missing.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.json"));
    assert_eq!(rekp(dir.path(), &["predict"]).status.code(), Some(1));
    assert_eq!(rekp(dir.path(), &["pool", "show", "nope.json"]).status.code(), Some(1));
    assert_eq!(rekp(dir.path(), &["--seed", "1", "scene-gen", "--spacing=-3"]).status.code(), Some(1));
}

#[test]
fn full_run_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [a.path(), b.path()] {
        pipeline(d, "3");
        ok(d, &["-q", "predict", "--plots"]);
    }
    for name in ["scene.json", "dataset.csv", "spectrum.csv", "pool.json", "cdf.csv", "summary.csv"] {
        let x = std::fs::read(a.path().join(name)).unwrap();
        assert_eq!(x, std::fs::read(b.path().join(name)).unwrap(), "{name} differs");
    }
    let dataset = std::fs::read_to_string(a.path().join("dataset.csv")).unwrap();
    assert_eq!(dataset.lines().count(), 15 * 30 + 1);
    let spectrum = std::fs::read_to_string(a.path().join("spectrum.csv")).unwrap();
    assert_eq!(spectrum.lines().count(), 16);
    let summary = std::fs::read_to_string(a.path().join("summary.csv")).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines[0], "method,mean,rmse,p80,n,n_capped");
    for (line, m) in lines[1..].iter().zip(["rekp", "log_distance", "knn"]) {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols[0], m);
        assert!(cols[3].parse::<f64>().unwrap().is_finite());
    }
    assert!(std::fs::read_to_string(a.path().join("cdf.svg")).unwrap().starts_with("<svg"));
}

#[test]
fn out_dir_and_config_file() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.json"), r#"{"seed": 5, "out_dir": "from_config", "street": {"n_positions": 6}}"#)
        .unwrap();
    ok(dir.path(), &["--config", "run.json", "-q", "scene-gen"]);
    assert!(dir.path().join("from_config/scene.json").exists());
    ok(dir.path(), &["--config", "run.json", "--out-dir", "flag", "-q", "scene-gen"]);
    let doc = std::fs::read_to_string(dir.path().join("flag/scene.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&doc).unwrap();
    assert_eq!(v["trajectory"].as_array().unwrap().len(), 6);

    std::fs::write(dir.path().join("bad.json"), r#"{"sede": 5}"#).unwrap();
    assert_eq!(rekp(dir.path(), &["--config", "bad.json", "scene-gen"]).status.code(), Some(1));
}

#[test]
fn pool_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    pipeline(d, "4");
    let shown = ok(d, &["pool", "show", "pool.json"]);
    assert!(shown.contains("entries (capacity 32)"), "{shown}");
    assert!(shown.contains("similarity"));

    let before = std::fs::read(d.join("pool.json")).unwrap();
    let text = ok(d, &["pool", "evict", "pool.json"]);
    assert!(text.contains("evicted 0 entries"), "{text}");
    assert_eq!(std::fs::read(d.join("pool.json")).unwrap(), before);

    let merged = ok(d, &["pool", "merge", "pool.json", "pool.json", "--out", "merged.json"]);
    let outcomes: Vec<&str> = merged.lines().filter(|l| l.starts_with("entry ")).collect();
    assert!(!outcomes.is_empty());
    assert!(outcomes.iter().all(|l| l.contains("AnsweredExisting")), "{merged}");

    ok(d, &["pool", "evict", "merged.json", "--capacity", "2"]);
    assert!(ok(d, &["pool", "show", "merged.json"]).starts_with("2 entries"));

    let bumped = String::from_utf8(before).unwrap().replacen("\"version\":1", "\"version\":2", 1);
    std::fs::write(d.join("future.json"), bumped).unwrap();
    assert_eq!(rekp(d, &["pool", "show", "future.json"]).status.code(), Some(1));
}

#[test]
fn empty_pool_shows_zero_entries() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["--seed", "1", "-q", "scene-gen", "--positions", "3"]);
    ok(d, &["--seed", "1", "-q", "simulate", "--realizations", "10"]);
    ok(d, &["--seed", "1", "-q", "learn", "--trees", "5", "--capacity", "1"]);
    let pool = std::fs::read_to_string(d.join("pool.json")).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&pool).unwrap();
    v["entries"] = serde_json::json!([]);
    std::fs::write(d.join("empty.json"), v.to_string()).unwrap();
    assert_eq!(ok(d, &["pool", "show", "empty.json"]).lines().next(), Some("0 entries (capacity 1)"));
}
