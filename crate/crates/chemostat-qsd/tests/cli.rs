//! End-to-end CLI contract: exit codes, produced files, manifest coverage
//! and the report aggregator.

use std::fs;
use std::path::Path;
use std::process::Command;

const BIN: &str = env!("CARGO_BIN_EXE_chemostat-qsd");

const BASE_CONFIG: &str = r#"
seed = 11
replicas = 5

[model]
D = 1.0
s_in = 2.0
k = 1.0

[model.growth]
kind = "linear"
c = 3.0

[simulate]
x0 = 2
s0 = 0.25
horizon = 3.0

[qsd]
x0 = 2
s0 = 0.25
t = 3.0
n_paths = 12000
particles = 300
fv_time = 6.0
lambda_grid = [2.0, 3.0, 4.0, 5.0, 6.0, 8.0]
yaglom_grid = [1.0, 2.0]

[bounds]
"#;

fn run(dir: &Path, config: &str, args: &[&str]) -> std::process::Output {
    let config_path = dir.join("config.toml");
    fs::write(&config_path, config).unwrap();
    Command::new(BIN)
        .args(["--config", config_path.to_str().unwrap(), "--out", dir.join("out").to_str().unwrap()])
        .args(args)
        .output()
        .unwrap()
}

#[test]
fn config_errors_exit_one_and_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let bad = BASE_CONFIG.replace("D = 1.0", "D = -1.0");
    let out = run(dir.path(), &bad, &["flow"]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("`D`"), "stderr: {stderr}");
}

#[test]
fn unknown_keys_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = format!("{BASE_CONFIG}\nnot_a_key = true\n");
    let out = run(dir.path(), &bad, &["flow"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_seed_for_stochastic_subcommand_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let no_seed = BASE_CONFIG.replace("seed = 11\n", "");
    let out = run(dir.path(), &no_seed, &["simulate"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed"));
}

#[test]
fn underpowered_qsd_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let tiny = BASE_CONFIG.replace("n_paths = 12000", "n_paths = 50");
    let out = run(dir.path(), &tiny, &["qsd"]);
    assert_eq!(out.status.code(), Some(2), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn manifests_reference_every_output_exactly_once() {
    let dir = tempfile::tempdir().unwrap();
    for sub in ["flow", "simulate", "verify-lyapunov", "bounds"] {
        let out = run(dir.path(), BASE_CONFIG, &[sub]);
        assert!(out.status.success(), "{sub}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let out_dir = dir.path().join("out");
    let mut referenced = Vec::new();
    let mut data_files = Vec::new();
    for entry in fs::read_dir(&out_dir).unwrap() {
        let name = entry.unwrap().file_name().to_string_lossy().into_owned();
        if name.ends_with(".manifest.json") {
            let manifest: serde_json::Value =
                serde_json::from_str(&fs::read_to_string(out_dir.join(&name)).unwrap()).unwrap();
            for rec in manifest["outputs"].as_array().unwrap() {
                referenced.push(rec["path"].as_str().unwrap().to_string());
                assert_eq!(rec["sha256"].as_str().unwrap().len(), 64);
            }
            assert_eq!(manifest["tool_version"], env!("CARGO_PKG_VERSION"));
        } else {
            data_files.push(name);
        }
    }
    referenced.sort();
    data_files.sort();
    let deduped: Vec<_> = {
        let mut r = referenced.clone();
        r.dedup();
        r
    };
    assert_eq!(referenced, deduped, "no output is referenced twice");
    assert_eq!(referenced, data_files, "manifests cover exactly the produced files");
}

#[test]
fn report_aggregates_prior_manifests() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run(dir.path(), BASE_CONFIG, &["flow"]).status.success());
    assert!(run(dir.path(), BASE_CONFIG, &["simulate"]).status.success());
    let out = run(dir.path(), BASE_CONFIG, &["report"]);
    assert!(out.status.success());
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/summary.json")).unwrap()).unwrap();
    let manifests = summary["manifests"].as_array().unwrap();
    assert_eq!(manifests.len(), 2);
    let subs: Vec<_> = manifests.iter().map(|m| m["subcommand"].as_str().unwrap()).collect();
    assert!(subs.contains(&"flow") && subs.contains(&"simulate"));
}

#[test]
fn simulate_flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), BASE_CONFIG, &["simulate", "--x0", "0", "--replicas", "2"]);
    assert!(out.status.success());
    let csv = fs::read_to_string(dir.path().join("out/trajectories.csv")).unwrap();
    // x0 = 0 is absorbing: only init and end rows per replica
    let lines: Vec<_> = csv.lines().collect();
    assert_eq!(lines.len(), 1 + 2 * 2, "header plus two rows per replica: {csv}");
    let summary = fs::read_to_string(dir.path().join("out/summary.jsonl")).unwrap();
    assert!(summary.lines().all(|l| l.contains("\"extinct_at\":0.0")));
}

#[test]
fn monod_model_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let monod = BASE_CONFIG.replace("kind = \"linear\"\nc = 3.0", "kind = \"monod\"\nm = 5.0\nK = 1.0");
    let out = run(dir.path(), &monod, &["verify-lyapunov"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let cert: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/lyapunov_certificate.json")).unwrap())
            .unwrap();
    assert_eq!(cert["certificate"]["passed"], true);
    assert_eq!(cert["validation"]["supercritical"], true);
}
