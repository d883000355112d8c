use std::fs;
use std::path::Path;

use siegmund_harness::config::validate_config;
use siegmund_harness::run::run_experiment;

fn csvs(dir: &Path) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read_to_string(&p).unwrap(),
            )
        })
        .collect();
    out.sort();
    out
}

fn run_in(dir: &Path, body: &str, threads: usize) -> siegmund_harness::run::OutputBundle {
    let raw = format!(
        r#"{{ {body}, "out": {:?}, "threads": {threads} }}"#,
        dir.to_str().unwrap()
    );
    run_experiment(&validate_config(&raw).unwrap()).unwrap()
}

const NOISY: &str = r#""kind": "rs_special", "seed": 5, "paths": 24, "horizon": 5000,
    "rs_special": {"alpha": 1, "xi": 1, "t_seq": {"kind": "power", "coef": 2, "exponent": 1, "offset": 4},
                   "noise": {"variant": "bounded_multiplicative", "sigma": 0.5}, "z0": 0},
    "analysis": {"rate": {"eta": 0.5, "tail_start": 100},
                 "envelope": {"template": {"variant": "rs", "b_cap": 1, "b_prime": 1, "n0": 4, "k": 1}}}"#;

#[test]
fn csvs_are_identical_across_reruns_and_worker_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let c = tmp.path().join("c");
    run_in(&a, NOISY, 1);
    run_in(&b, NOISY, 1);
    run_in(&c, NOISY, 3);
    let first = csvs(&a);
    assert!(first.len() >= 4);
    assert_eq!(first, csvs(&b));
    assert_eq!(first, csvs(&c));
}

#[test]
fn q_learning_bundle_is_thread_independent() {
    let body = r#""kind": "linear_q", "seed": 3, "paths": 6, "horizon": 20000,
        "schedule": {"kind": "lr1", "c_alpha": 5, "nu": 0.8}"#;
    let tmp = tempfile::tempdir().unwrap();
    run_in(&tmp.path().join("a"), body, 1);
    run_in(&tmp.path().join("b"), body, 2);
    assert_eq!(csvs(&tmp.path().join("a")), csvs(&tmp.path().join("b")));
}

#[test]
fn manifest_echoes_the_expanded_config() {
    let tmp = tempfile::tempdir().unwrap();
    let bundle = run_in(tmp.path(), NOISY, 1);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["kind"], "rs_special");
    assert_eq!(manifest["seed"], 5);
    assert_eq!(manifest["path_ids"], serde_json::json!([0, 23]));
    assert_eq!(manifest["partial"], false);
    // defaults filled in by validation appear in the echoed config
    assert_eq!(manifest["config"]["rs_special"]["growth_b"], 1.5);
    assert_eq!(manifest["config"]["analysis"]["rate"]["train_fraction"], 0.5);
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
    for f in &bundle.files {
        assert!(tmp.path().join(f).exists(), "{f}");
    }
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("summary.json")).unwrap()).unwrap();
    let verdicts = summary["verdicts"].as_array().unwrap();
    assert!(verdicts.iter().any(|v| v["criterion"] == 4));
    assert!(verdicts.iter().any(|v| v["criterion"] == 5));
}

#[test]
fn deterministic_run_reaches_the_interval() {
    let body = r#""kind": "rs_special", "paths": 1, "horizon": 100000,
        "rs_special": {"alpha": 1, "xi": 1, "t_seq": {"kind": "power", "coef": 1, "exponent": 0.75},
                       "noise": {"variant": "deterministic"}, "z0": 10}"#;
    let tmp = tempfile::tempdir().unwrap();
    let bundle = run_in(tmp.path(), body, 1);
    assert!(bundle.all_pass(), "{:?}", bundle.verdicts);
    let tail = bundle.verdicts.iter().find(|v| v.check == "tail_distance").unwrap();
    assert_eq!(tail.criterion, Some(1));
    assert_eq!(tail.value, 0.0);
}

#[test]
fn analyze_reproduces_the_simulated_statistics() {
    let tmp = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for seed in 0..3 {
        let body = format!(
            r#""kind": "rs_special", "seed": {seed}, "paths": 1, "horizon": 3000,
            "rs_special": {{"alpha": 1, "xi": 1, "t_seq": {{"kind": "power", "coef": 1, "exponent": 0.75}},
                           "noise": {{"variant": "bounded_multiplicative", "sigma": 0.5}}, "z0": 0}}"#
        );
        let dir = tmp.path().join(format!("sim{seed}"));
        run_in(&dir, &body, 1);
        files.push(dir.join("path_0.csv"));
    }
    let body = format!(r#""kind": "analyze", "input": {{"files": {files:?}, "bound": 1.0}}"#);
    let bundle = run_in(&tmp.path().join("an"), &body, 1);
    assert_eq!(bundle.metrics["input_paths"], 3.0);
    assert_eq!(bundle.metrics["input_horizon"], 3000.0);
    let paths = fs::read_to_string(tmp.path().join("an/paths.csv")).unwrap();
    let sim = fs::read_to_string(tmp.path().join("sim1/paths.csv")).unwrap();
    // path 1 of the analysis is the seed-1 simulation, relabelled
    let relabel: Vec<String> = sim.lines().skip(1).map(|l| l.replacen("0,", "1,", 1)).collect();
    let got: Vec<&str> = paths.lines().skip(1).filter(|l| l.starts_with("1,")).collect();
    assert_eq!(got, relabel);
}
