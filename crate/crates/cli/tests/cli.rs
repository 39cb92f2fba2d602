use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const SCENARIO: &str = r#"
name = "square"
[dynamics]
model = "integrator"
tau = 0.1
input_lower = [-1.0, -1.0]
input_upper = [1.0, 1.0]
disturbance_lower = [-0.2, -0.2]
disturbance_upper = [0.2, 0.2]
[grid]
lower = [0.0, 0.0]
upper = [1.0, 1.0]
cells = [20, 20]
periodic = [false, false]
inputs = [3, 3]
[cost]
style = "time_turn"
turn_input = 1
[[cost.obstacles]]
lower = [0.4, 0.4]
upper = [0.6, 0.6]
[[targets]]
name = "depot"
lower = [0.0, 0.0]
upper = [0.2, 0.2]
[[targets]]
lower = [0.8, 0.0]
upper = [1.0, 0.2]
[[targets]]
lower = [0.8, 0.8]
upper = [1.0, 1.0]
[[targets]]
lower = [0.0, 0.8]
upper = [0.2, 1.0]
[routing]
num_vehicles = 2
max_steps = 500
"#;

fn symroute(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_symroute"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = symroute(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn setup(tmp: &TempDir, text: &str) -> (PathBuf, String) {
    let scenario = tmp.path().join("square.toml");
    fs::write(&scenario, text).unwrap();
    let dir = tmp.path().join("run");
    (scenario, dir.to_str().unwrap().to_string())
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = fs::read_dir(dir.join("simulate"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

#[test]
fn full_pipeline_and_plot() {
    let tmp = TempDir::new().unwrap();
    let (scenario, dir) = setup(&tmp, SCENARIO);
    let out = ok(&["abstract", scenario.to_str().unwrap(), "-o", &dir]);
    assert!(out.contains("400 cells"), "{out}");
    ok(&["coverage", &dir]);

    // no trajectories yet: static layers only
    let svg = tmp.path().join("static.svg");
    ok(&["plot", &dir, "-o", svg.to_str().unwrap()]);
    let text = fs::read_to_string(&svg).unwrap();
    assert!(text.contains("#404040") && !text.contains("<polyline"));

    let out = ok(&["synth", "cvrp", &dir]);
    assert!(out.contains("plan cost"), "{out}");
    let out = ok(&["simulate", &dir, "--runs", "4", "--fail", "0:3", "--compare"]);
    for p in ["algorithm2", "coverage-chain", "greedy"] {
        assert!(out.contains(p), "{out}");
    }
    assert!(Path::new(&dir).join("simulate/comparison.json").exists());
    ok(&["plot", &dir, "-o", svg.to_str().unwrap()]);
    let text = fs::read_to_string(&svg).unwrap();
    assert_eq!(text.matches("<polyline").count(), 2);

    ok(&["--threads", "1", "synth", "tsp", &dir, "--from", "0.9,0.5", "--rho", "0.3"]);
    ok(&["simulate", &dir, "--no-disturbance"]);
}

#[test]
fn simulation_csv_is_reproducible() {
    let tmp = TempDir::new().unwrap();
    let (scenario, dir) = setup(&tmp, SCENARIO);
    ok(&["abstract", scenario.to_str().unwrap(), "-o", &dir]);
    ok(&["coverage", &dir]);
    ok(&["synth", "cvrp", &dir]);
    ok(&["simulate", &dir, "--runs", "100", "--seed", "7"]);
    let first = csv_files(Path::new(&dir));
    assert_eq!(first.len(), 200);
    ok(&["simulate", &dir, "--runs", "100", "--seed", "7"]);
    assert_eq!(first, csv_files(Path::new(&dir)));
    ok(&["simulate", &dir, "--runs", "100", "--seed", "8"]);
    assert_ne!(first, csv_files(Path::new(&dir)));
}

#[test]
fn exit_codes() {
    let tmp = TempDir::new().unwrap();

    // validation: target leaves the domain
    let bad = SCENARIO.replace("upper = [1.0, 1.0]\n[[targets]]", "upper = [1.0, 1.5]\n[[targets]]");
    let (scenario, dir) = setup(&tmp, &bad);
    let out = symroute(&["abstract", scenario.to_str().unwrap(), "-o", &dir]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("target2"));

    // unknown takeover policy
    let (scenario, dir) = setup(&tmp, SCENARIO);
    ok(&["abstract", scenario.to_str().unwrap(), "-o", &dir]);
    let out = symroute(&["synth", "cvrp", &dir]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("coverage"));
    ok(&["coverage", &dir]);
    ok(&["synth", "cvrp", &dir]);
    let out = symroute(&["simulate", &dir, "--policy", "nope"]);
    assert_eq!(out.status.code(), Some(3));

    // infeasible: more vehicles than customers
    let (scenario, dir) = setup(&tmp, &SCENARIO.replace("num_vehicles = 2", "num_vehicles = 5"));
    ok(&["abstract", scenario.to_str().unwrap(), "-o", &dir]);
    ok(&["coverage", &dir]);
    let out = symroute(&["synth", "cvrp", &dir]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}
