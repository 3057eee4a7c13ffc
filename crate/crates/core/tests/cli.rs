use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_stackdecode"));
    c.env_remove("STACKDECODE_CACHE");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn report_json(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

fn toy_cohort(root: &Path, n_features: usize) -> String {
    let spec = root.join("toy.toml");
    fs::write(
        &spec,
        format!(
            "n_subjects = 4\nn_samples_per_subject = 40\nn_features = {n_features}\nn_classes = 4\nsubject_shift = 0.4\nseed = 3\n"
        ),
    )
    .unwrap();
    let out = root.join(format!("toy{n_features}"));
    ok(&["generate", "--spec", spec.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    out.to_str().unwrap().to_string()
}

#[test]
fn generate_preset_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let msg = ok(&["generate", "--preset", "forrest", "--seed", "5", "--out", a.to_str().unwrap()]);
    assert!(msg.contains("10 subjects x 175 samples"), "{msg}");
    ok(&["generate", "--preset", "forrest", "--seed", "5", "--out", b.to_str().unwrap()]);
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("cohort.json")).unwrap()).unwrap();
    assert_eq!(manifest["subjects"].as_array().unwrap().len(), 10);
    assert_eq!(manifest["classes"].as_array().unwrap().len(), 5);
    for entry in fs::read_dir(&a).unwrap() {
        let name = entry.unwrap().file_name();
        assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap(), "{name:?}");
    }
}

#[test]
fn invalid_inputs_exit_nonzero_with_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x");
    let r = run(&["generate", "--preset", "hcp", "--out", out.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("hcp"));

    let missing = tmp.path().join("nowhere");
    let r = run(&["run", "--cohort", missing.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(3));

    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "[experiment]\nn_cv = 0\n").unwrap();
    let r = run(&["run", "--config", bad.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(2));

    let r = run(&["run", "--families", "xgboost", "--out", out.to_str().unwrap()]);
    assert!(!r.status.success());
}

#[test]
fn run_report_and_conventional_only() {
    let tmp = tempfile::tempdir().unwrap();
    let cohort = toy_cohort(tmp.path(), 12);
    let out = tmp.path().join("run");
    ok(&["run", "--cohort", &cohort, "--families", "svc", "--n-cv", "2", "--out", out.to_str().unwrap()]);
    for f in ["report.json", "report.csv", "summaries.csv", "gains.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let report = report_json(&out);
    assert_eq!(report["metadata"]["n_subjects"], 4);
    let text = ok(&["report", out.join("report.json").to_str().unwrap(), "--csv", tmp.path().join("t.csv").to_str().unwrap()]);
    assert!(text.contains("ensemble - conventional"));
    assert!(!text.contains("not computed"));
    assert!(fs::read_to_string(tmp.path().join("t.csv")).unwrap().starts_with("table,"));

    let conv = tmp.path().join("conv");
    ok(&["run", "--cohort", &cohort, "--families", "svc", "--n-cv", "2", "--approaches", "conventional", "--out", conv.to_str().unwrap()]);
    let report = report_json(&conv);
    let records = report["records"].as_array().unwrap();
    assert!(records.iter().all(|r| r["approach"] == "conventional"));
    let text = ok(&["report", conv.join("report.json").to_str().unwrap()]);
    assert!(text.contains("not computed"), "{text}");

    let r = run(&["report", conv.join("report.json").to_str().unwrap(), "--query", "speed"]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn warm_cache_gives_identical_hash_and_less_time() {
    let tmp = tempfile::tempdir().unwrap();
    let cohort = toy_cohort(tmp.path(), 256);
    let cache = tmp.path().join("cache");
    let args = |out: &str| {
        vec![
            "run".to_string(),
            "--cohort".into(),
            cohort.clone(),
            "--families".into(),
            "svc".into(),
            "--approaches".into(),
            "ensemble".into(),
            "--n-cv".into(),
            "2".into(),
            "--cache-dir".into(),
            cache.to_str().unwrap().into(),
            "--out".into(),
            out.into(),
        ]
    };
    let cold_dir = tmp.path().join("cold");
    let warm_dir = tmp.path().join("warm");
    let cold_args = args(cold_dir.to_str().unwrap());
    ok(&cold_args.iter().map(String::as_str).collect::<Vec<_>>());
    let warm_args = args(warm_dir.to_str().unwrap());
    ok(&warm_args.iter().map(String::as_str).collect::<Vec<_>>());
    let cold = report_json(&cold_dir);
    let warm = report_json(&warm_dir);
    assert_eq!(cold["metadata"]["content_hash"], warm["metadata"]["content_hash"]);
    assert_eq!(cold["run_info"]["bank_cache_misses"], 4);
    assert_eq!(warm["run_info"]["bank_cache_hits"], 4);
    let (tc, tw) = (
        cold["run_info"]["wall_time_secs"].as_f64().unwrap(),
        warm["run_info"]["wall_time_secs"].as_f64().unwrap(),
    );
    println!("cold {tc:.3}s, warm {tw:.3}s");
    assert!(tw < tc);
}

#[test]
fn theory_writes_table() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("theory");
    ok(&["theory", "--n-samples", "100", "--grid", "1,10,100", "--trials", "50", "--out", out.to_str().unwrap()]);
    let csv = fs::read_to_string(out.join("theory.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "n_subjects,predicted_error,regime,predicted_optimal,empirical_conventional,empirical_ensemble,singular_trials");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("1,1.01,small-N"), "{}", lines[1]);
    assert!(lines[2].starts_with("10,0.2,balanced,true"), "{}", lines[2]);
    assert!(lines[3].contains("large-N"));
}

#[test]
fn importance_writes_one_row_per_source() {
    let tmp = tempfile::tempdir().unwrap();
    let cohort = toy_cohort(tmp.path(), 12);
    let out = tmp.path().join("imp.csv");
    ok(&["importance", "--cohort", &cohort, "--target", "sub-001", "--out", out.to_str().unwrap()]);
    let csv = fs::read_to_string(&out).unwrap();
    assert_eq!(csv.lines().count(), 4);
    let total: f64 = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse::<f64>().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-9);
    let feats = tmp.path().join("feat.csv");
    ok(&["importance", "--cohort", &cohort, "--target", "sub-001", "--kind", "features", "--family", "svc", "--out", feats.to_str().unwrap()]);
    assert_eq!(fs::read_to_string(&feats).unwrap().lines().count(), 1 + 12 * 4);
}
