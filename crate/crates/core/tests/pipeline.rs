use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use symroute::pipeline::{MissionKind, SimulateOptions, Stage, SynthOptions, Workspace};
use symroute::scenario::{load_scenario, parse_scenario};
use symroute::Error;
use tempfile::TempDir;

const SMALL: &str = r#"
name = "ring"
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
capacity = 2
max_steps = 500
initial_state = [0.5, 0.1]
"#;

fn scenario_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn workspace(tmp: &TempDir, text: &str) -> Workspace {
    let path = tmp.path().join("input.toml");
    fs::write(&path, text).unwrap();
    Workspace::create(&path, &tmp.path().join("run")).unwrap()
}

fn run_all(ws: &Workspace) {
    ws.build_abstraction().unwrap();
    ws.build_coverage().unwrap();
    ws.build_mission(&SynthOptions::new(MissionKind::Cvrp)).unwrap();
    ws.simulate(&SimulateOptions { runs: 5, seed: 4, ..SimulateOptions::default() }).unwrap();
}

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn missing_stage_names_the_command() {
    let tmp = TempDir::new().unwrap();
    let ws = workspace(&tmp, SMALL);
    match ws.build_coverage() {
        Err(Error::MissingArtifact { command, .. }) => assert_eq!(command, "abstract"),
        other => panic!("{other:?}"),
    }
    ws.build_abstraction().unwrap();
    match ws.build_mission(&SynthOptions::new(MissionKind::Cvrp)) {
        Err(e @ Error::MissingArtifact { .. }) => assert!(e.to_string().contains("coverage"), "{e}"),
        other => panic!("{other:?}"),
    }
    // the earliest missing stage is named
    let e = ws.simulate(&SimulateOptions::default()).unwrap_err();
    assert!(matches!(e, Error::MissingArtifact { command: "coverage", .. }), "{e:?}");
    ws.build_coverage().unwrap();
    let e = ws.simulate(&SimulateOptions::default()).unwrap_err();
    assert!(matches!(e, Error::MissingArtifact { command: "synth", .. }), "{e:?}");
    assert!(ws.tracks().unwrap().is_empty());
}

#[test]
fn editing_the_scenario_makes_artifacts_stale() {
    let tmp = TempDir::new().unwrap();
    let ws = workspace(&tmp, SMALL);
    ws.build_abstraction().unwrap();
    ws.build_coverage().unwrap();
    let file = ws.dir().join("scenario.toml");
    fs::write(&file, SMALL.replace("max_steps = 500", "max_steps = 400")).unwrap();
    let ws = Workspace::open(ws.dir()).unwrap();
    assert!(matches!(ws.coverage(), Err(Error::StaleArtifact { .. })));
    assert!(matches!(ws.build_coverage(), Err(Error::StaleArtifact { .. })));
    ws.build_abstraction().unwrap();
    ws.build_coverage().unwrap();
    ws.coverage().unwrap();
}

#[test]
fn rerunning_upstream_with_other_output_makes_downstream_stale() {
    let tmp = TempDir::new().unwrap();
    let ws = workspace(&tmp, SMALL);
    ws.build_abstraction().unwrap();
    ws.build_coverage().unwrap();
    ws.build_mission(&SynthOptions::new(MissionKind::Cvrp)).unwrap();
    ws.mission().unwrap();
    // a different mission changes the synth manifest
    let mut opts = SynthOptions::new(MissionKind::Tsp);
    opts.refine = false;
    ws.build_mission(&opts).unwrap();
    ws.simulate(&SimulateOptions::default()).unwrap();
    ws.build_mission(&SynthOptions::new(MissionKind::Cvrp)).unwrap();
    match ws.tracks() {
        Err(Error::StaleArtifact { reason, .. }) => assert!(reason.contains("simulate"), "{reason}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn artifacts_are_byte_identical_across_runs() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let wa = workspace(&a, SMALL);
    let wb = workspace(&b, SMALL);
    run_all(&wa);
    run_all(&wb);
    let first = snapshot(wa.dir());
    assert_eq!(first, snapshot(wb.dir()));
    // rebuilding in place gives the same bytes too
    run_all(&wa);
    assert_eq!(first, snapshot(wa.dir()));
    assert!(first.keys().any(|k| k.starts_with(Stage::Simulation.dir())));
    assert_eq!(wa.tracks().unwrap().len(), wa.mission().unwrap().0.starts.len());
}

#[test]
fn tsp_mission_from_a_given_state() {
    let tmp = TempDir::new().unwrap();
    let ws = workspace(&tmp, SMALL);
    ws.build_abstraction().unwrap();
    ws.build_coverage().unwrap();
    let mut opts = SynthOptions::new(MissionKind::Tsp);
    opts.from = Some(vec![0.9, 0.5]);
    let m = ws.build_mission(&opts).unwrap();
    assert_eq!(m.vehicles.len(), 1);
    let mut tour = m.vehicles[0].tour.clone();
    tour.sort_unstable();
    tour.dedup();
    assert_eq!(tour, vec![0, 1, 2, 3]);
    assert!(m.vehicles[0].legs.iter().all(|l| l.start_value.is_finite()));
    let (_, reports) = ws.simulate(&SimulateOptions { runs: 3, ..SimulateOptions::default() }).unwrap();
    assert!(reports.iter().all(|r| r.complete && r.bound_violations == 0));
}

#[test]
fn shipped_scenarios_parse() {
    let truck = load_scenario(&scenario_path("truck_small.toml")).unwrap();
    assert_eq!(truck.targets.len(), 9);
    assert_eq!(truck.dynamics.model().name(), "bicycle");
    assert_eq!(truck.grid.dim(), 4);

    let uav = load_scenario(&scenario_path("uav_two.toml")).unwrap();
    assert_eq!(uav.dynamics.model().name(), "dubins");
    assert_eq!(uav.dynamics.tau(), 0.65);
    assert_eq!(uav.routing.num_vehicles, Some(2));

    let small = load_scenario(&scenario_path("uav_two_small.toml")).unwrap();
    assert_eq!(small.targets.len(), 5);
    assert!(small.target_cells().iter().all(|c| !c.is_empty()));
}

#[test]
fn target_outside_the_domain_is_named() {
    let text = SMALL.replace("lower = [0.8, 0.8]\nupper = [1.0, 1.0]", "lower = [0.8, 0.8]\nupper = [1.0, 1.3]");
    let e = parse_scenario(&text, "bad.toml").unwrap_err();
    assert!(matches!(e, Error::Validation { .. }), "{e:?}");
    assert!(e.to_string().contains("target2"), "{e}");
    assert_eq!(e.exit_code(), 3);

    let e = parse_scenario("name = 3", "bad.toml").unwrap_err();
    assert_eq!(e.exit_code(), 3);
    let e = parse_scenario(&SMALL.replace("tau = 0.1", "tau = 0.1\nspeed = 2"), "bad.toml").unwrap_err();
    assert!(e.to_string().contains("line"), "{e}");
}

#[test]
fn infeasible_coverage_is_reported() {
    // the goal sits in a pocket closed off by obstacles
    let text = SMALL.replace(
        "[[cost.obstacles]]\nlower = [0.4, 0.4]\nupper = [0.6, 0.6]",
        "[[cost.obstacles]]\nlower = [0.6, 0.6]\nupper = [0.8, 1.0]\n[[cost.obstacles]]\nlower = [0.8, 0.6]\nupper = [1.0, 0.8]",
    );
    let tmp = TempDir::new().unwrap();
    let ws = workspace(&tmp, &text);
    ws.build_abstraction().unwrap();
    let e = ws.build_coverage().unwrap_err();
    assert!(matches!(e, Error::Infeasible(_)), "{e:?}");
    assert_eq!(e.exit_code(), 2);
}
