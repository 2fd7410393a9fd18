use std::path::Path;
use std::process::{Command, Output};

fn edgeslice(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_edgeslice"))
        .args(args)
        .env("EDGESLICE_LOG", "off")
        .output()
        .unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

const SMALL: &str = r#"{"regions": 2, "horizon": 4, "short_slots": 3, "warmup": 8}"#;

#[test]
fn malformed_config_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(dir.path(), "bad.json", "{\"regions\": 2,\n  oops }");
    let out_dir = dir.path().join("out");
    let out = edgeslice(&["run", "--config", &config, "--policy", "greedy", "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn invalid_field_and_unknown_policy_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let zero = write(dir.path(), "zero.json", r#"{"horizon": 0}"#);
    let out = edgeslice(&["run", "--config", &zero, "--policy", "greedy", "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let small = write(dir.path(), "small.json", SMALL);
    let out = edgeslice(&["run", "--config", &small, "--policy", "psychic", "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn undersized_catalog_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(
        dir.path(),
        "tiny.json",
        r#"{
            "regions": 1, "horizon": 2, "short_slots": 2, "warmup": 8,
            "catalog": [{"bandwidth": [{"capacity": 1000.0, "cost": 1.0}],
                         "vms": [{"count": 1, "cost": 1.0}],
                         "vm_frequency": 1e9}]
        }"#,
    );
    let out_dir = dir.path().join("out");
    let out = edgeslice(&["run", "--config", &config, "--policy", "greedy", "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn run_writes_identical_reports() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(dir.path(), "small.json", SMALL);
    let mut reports = Vec::new();
    for name in ["a", "b"] {
        let out_dir = dir.path().join(name);
        let out = edgeslice(&["run", "--config", &config, "--policy", "greedy", "--seed", "3", "--out", out_dir.to_str().unwrap()]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        reports.push((
            std::fs::read(out_dir.join("metrics.csv")).unwrap(),
            std::fs::read(out_dir.join("summary.json")).unwrap(),
        ));
    }
    assert_eq!(reports[0], reports[1]);
    let csv = String::from_utf8(reports[0].0.clone()).unwrap();
    assert!(csv.starts_with("h,revenue,cost,profit,offloaded,hit_rate,bw_util,vm_util"));
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn compare_writes_per_policy_rows() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(dir.path(), "small.json", SMALL);
    let out_dir = dir.path().join("cmp");
    let out = edgeslice(&[
        "compare",
        "--config",
        &config,
        "--policies",
        "greedy,random,auction",
        "--seeds",
        "1,2",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(out_dir.join("comparison.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(out_dir.join("runs/random-seed2/metrics.csv").exists());
}

#[test]
fn oracle_prints_a_passing_summary() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(dir.path(), "small.json", SMALL);
    let out = edgeslice(&["oracle", "--config", &config, "--instances", "5", "--draws", "200"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("\"offload_violations\": 0"), "{stdout}");
}
