use serde_json::Value;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn sfl() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_sfl"));
    c.env_remove("SFL_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    sfl().args(args).output().expect("binary runs")
}

fn golden(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

fn grid_scenario(dir: &Path) -> String {
    let path = dir.join("grid.json");
    let out = run(&["gen", "--preset", "grid", "--size", "3", "--seed", "1", "--out", path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    path.to_str().unwrap().to_string()
}

fn stderr_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stderr).unwrap_or_else(|_| panic!("stderr is not JSON: {}", String::from_utf8_lossy(&out.stderr)))
}

/// Sorted key paths of a JSON document; arrays contribute their first element.
fn schema(v: &Value, prefix: &str, out: &mut Vec<String>) {
    match v {
        Value::Object(o) => {
            for (k, x) in o {
                let p = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                out.push(p.clone());
                schema(x, &p, out);
            }
        }
        Value::Array(a) => {
            if let Some(x) = a.first() {
                schema(x, &format!("{prefix}[]"), out);
            }
        }
        _ => {}
    }
}

#[test]
fn solve_report_matches_golden_schema() {
    let dir = tempfile::tempdir().unwrap();
    let sc = grid_scenario(dir.path());
    let out = run(&["solve", "--scenario", &sc, "--charge", "cordon-in", "--level", "1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let mut keys = Vec::new();
    schema(&v, "", &mut keys);
    keys.sort();
    keys.dedup();
    let expected = std::fs::read_to_string(golden("solve_schema.txt")).unwrap();
    assert_eq!(keys.join("\n") + "\n", expected);
}

#[test]
fn floats_carry_ten_significant_digits() {
    let dir = tempfile::tempdir().unwrap();
    let sc = grid_scenario(dir.path());
    let out = run(&["solve", "--scenario", &sc]);
    let text = String::from_utf8(out.stdout).unwrap();
    let v: Value = serde_json::from_str(&text).unwrap();
    let mut stack = vec![&v];
    while let Some(x) = stack.pop() {
        match x {
            Value::Number(n) if n.is_f64() => {
                let s = n.to_string();
                let digits = s.split(['e', 'E']).next().unwrap().chars().filter(|c| c.is_ascii_digit()).collect::<String>();
                assert!(digits.trim_start_matches('0').len() <= 10, "{s}");
            }
            Value::Array(a) => stack.extend(a),
            Value::Object(o) => stack.extend(o.values()),
            _ => {}
        }
    }
}

#[test]
fn csv_header_is_pinned() {
    let dir = tempfile::tempdir().unwrap();
    let sc = grid_scenario(dir.path());
    let out = run(&["solve", "--scenario", &sc, "--format", "csv"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let header = text.lines().next().unwrap();
    assert_eq!(header.to_string() + "\n", std::fs::read_to_string(golden("csv_header.txt")).unwrap());
    assert_eq!(text.lines().filter(|l| !l.is_empty()).count(), 2);
}

#[test]
fn negative_level_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let sc = grid_scenario(dir.path());
    let out = run(&["solve", "--scenario", &sc, "--charge", "trip", "--level", "-1"]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_json(&out);
    assert!(err["message"].as_str().unwrap().contains("level must be nonnegative"));
}

#[test]
fn bad_inputs_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.json");
    let out = run(&["solve", "--scenario", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"], "IoError");

    let broken = dir.path().join("broken.json");
    std::fs::write(&broken, "{\"zones\": 3}").unwrap();
    let out = run(&["solve", "--scenario", broken.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));

    let out = run(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"], "Usage");

    let sc = grid_scenario(dir.path());
    let out = run(&["sweep", "--scenario", &sc, "--charge", "trip", "--levels", "1:2", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unreachable_target_is_a_solver_failure() {
    let dir = tempfile::tempdir().unwrap();
    let sc = grid_scenario(dir.path());
    let out = run(&["target", "--scenario", &sc, "--metric", "nc-reduction", "--value", "1e9"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(stderr_json(&out)["error"], "TargetOutOfRange");
}

#[test]
fn gen_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for p in [&a, &b] {
        assert!(run(&["gen", "--preset", "sf-like", "--seed", "7", "--out", p.to_str().unwrap()]).status.success());
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let v: Value = serde_json::from_slice(&std::fs::read(&a).unwrap()).unwrap();
    assert_eq!(v["zones"].as_array().unwrap().len(), 19);
}

#[test]
fn single_level_sweep_matches_solve() {
    let dir = tempfile::tempdir().unwrap();
    let sc = grid_scenario(dir.path());
    let out_dir = dir.path().join("sweep");
    let out = run(&["sweep", "--scenario", &sc, "--charge", "cordon-both", "--levels", "0.5:2:1", "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let solo = dir.path().join("solo.json");
    let out = run(&["solve", "--scenario", &sc, "--charge", "cordon-both", "--level", "0.5", "--out", solo.to_str().unwrap()]);
    assert!(out.status.success());
    assert_eq!(std::fs::read(out_dir.join("report_000.json")).unwrap(), std::fs::read(&solo).unwrap());
    let csv = std::fs::read_to_string(out_dir.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.lines().nth(1).unwrap().starts_with("0.5,"));
}

#[test]
fn output_is_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let sc = grid_scenario(dir.path());
    let args = ["solve", "--scenario", &sc, "--charge", "trip", "--level", "0.5"];
    let one = sfl().args(args).arg("--threads").arg("1").output().unwrap();
    let env = sfl().args(args).env("SFL_THREADS", "3").output().unwrap();
    let again = sfl().args(args).arg("--threads").arg("1").output().unwrap();
    assert!(one.status.success() && env.status.success());
    assert_eq!(one.stdout, env.stdout);
    assert_eq!(one.stdout, again.stdout);
}

#[test]
fn sensitivity_reports_every_scale() {
    let dir = tempfile::tempdir().unwrap();
    let sc = grid_scenario(dir.path());
    let out = run(&["sensitivity", "--scenario", &sc, "--param", "N0", "--scales", "0.7,1.3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let runs = v["runs"].as_array().unwrap();
    assert_eq!(runs.len(), 2);
    assert_eq!(v["param"], "N0");
    let supply = |k: usize| runs[k]["report"]["state"]["N_supply"].as_f64().unwrap();
    assert!(supply(1) > supply(0));
}
