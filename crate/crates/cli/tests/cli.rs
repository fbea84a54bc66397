use std::path::PathBuf;
use std::process::{Command, Output};

fn swisac(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_swisac")).args(args).output().expect("binary runs")
}

fn repo(path: &str) -> String {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..");
    root.join(path).to_string_lossy().into_owned()
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn bench_csv_has_one_row_per_method_and_sample() {
    let scenario = repo("scenarios/small.json");
    let out = stdout(&swisac(&["bench", "--scenario", &scenario, "--samples", "3", "--methods", "zf,random,cmimo"]));
    let lines: Vec<&str> = out.lines().collect();
    assert!(lines[0].starts_with("method,sample,seed,sr,csr,ms,feasible,digest,layout,cr_1,cr_2"));
    assert_eq!(lines.len(), 1 + 9);
}

#[test]
fn bench_json_reports_every_method() {
    let scenario = repo("scenarios/small.json");
    let out = stdout(&swisac(&[
        "bench", "--scenario", &scenario, "--samples", "2", "--methods", "zf,cmimo", "--format", "json",
    ]));
    let doc: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(doc["methods"]["zf"]["count"], 2);
    assert_eq!(doc["methods"]["cmimo"]["count"], 2);
}

#[test]
fn optimize_emits_a_trace_and_a_solution() {
    let scenario = repo("scenarios/small.json");
    let csv = stdout(&swisac(&["optimize", "--scenario", &scenario, "--seed", "3"]));
    assert!(csv.lines().count() >= 2);
    let json = stdout(&swisac(&["optimize", "--scenario", &scenario, "--seed", "3", "--format", "json"]));
    let doc: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(doc["w"]["re"].as_array().unwrap().len(), 4);
    assert!(doc["sr"].as_f64().unwrap() > 0.0);
}

#[test]
fn infer_needs_weights_and_uses_them() {
    let scenario = repo("scenarios/small.json");
    assert!(!swisac(&["infer", "--scenario", &scenario]).status.success());
    let weights = repo("crates/core/assets/golden_small.json");
    let doc: serde_json::Value =
        serde_json::from_str(&stdout(&swisac(&["infer", "--scenario", &scenario, "--weights", &weights]))).unwrap();
    let power: f64 = ["re", "im"]
        .iter()
        .flat_map(|p| doc["w"][p].as_array().unwrap().iter().flat_map(|r| r.as_array().unwrap().iter()))
        .map(|x| x.as_f64().unwrap().powi(2))
        .sum();
    assert!((power - 1.0).abs() < 1e-9);
}

#[test]
fn check_passes_on_the_small_scenario() {
    let scenario = repo("scenarios/small.json");
    let out = stdout(&swisac(&["check", "--scenario", &scenario, "--samples", "2"]));
    assert_eq!(out.lines().filter(|l| l.starts_with("PASS")).count(), 10);
}

#[test]
fn bad_arguments_fail_cleanly() {
    assert!(!swisac(&["bench", "--methods", "nope", "--samples", "1"]).status.success());
    assert!(!swisac(&["bench", "--format", "xml", "--samples", "1"]).status.success());
    assert!(!swisac(&["bench", "--scenario", "/does/not/exist.json"]).status.success());
    assert!(!swisac(&["bench", "--methods", "gnn", "--samples", "1"]).status.success());
}

#[test]
fn output_file_receives_the_report() {
    let scenario = repo("scenarios/small.json");
    let path = std::env::temp_dir().join(format!("swisac-cli-{}.csv", std::process::id()));
    let p = path.to_string_lossy().into_owned();
    let o = swisac(&["bench", "--scenario", &scenario, "--samples", "1", "--methods", "zf", "--out", &p]);
    assert!(stdout(&o).is_empty());
    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::remove_file(&path).ok();
    assert_eq!(text.lines().count(), 2);
}
