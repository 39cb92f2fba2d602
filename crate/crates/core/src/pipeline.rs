//! Artifact directory shared by the pipeline commands.
//!
//! ```text
//! <dir>/scenario.toml
//! <dir>/abstraction/{manifest.json, abstraction.socab}
//! <dir>/coverage/{manifest.json, value_<i>.socvf, controller_<i>.socct}
//! <dir>/mission/{manifest.json, v<k>_leg<j>.{socct,socvf}, v<k>_leg<j>_terminal.socvf}
//! <dir>/simulate/{manifest.json, report.json, run<r>_vehicle<k>.csv}
//! ```
//!
//! Every manifest records the scenario hash and the digest of the manifest it
//! was built from, so a re-run upstream stage invalidates everything below it.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::abstraction::{build_abstraction, AbstractSystem};
use crate::coverage::{solve_coverage, CoverageMode, CoverageSolution, CoverageTarget};
use crate::dynamics::{DisturbanceMode, DisturbancePolicy};
use crate::error::{Error, Result};
use crate::formats::{self, ext_real};
use crate::mission::{synthesize_cvrp, synthesize_tsp_from_state, FixedSchedule, Leg, MissionController, Planner, Refinement, Schedule};
use crate::reach::{TerminalCost, ValueFunction};
use crate::routing::{CostMatrix, TourPlan};
use crate::scenario::{load_scenario, parse_scenario, Scenario};
use crate::simulator::{estimate_performance, Failure, MissionReport, PerformanceEstimate, Plant, SimConfig};

pub const SCENARIO_FILE: &str = "scenario.toml";
const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Abstraction,
    Coverage,
    Mission,
    Simulation,
}

impl Stage {
    pub fn dir(self) -> &'static str {
        match self {
            Stage::Abstraction => "abstraction",
            Stage::Coverage => "coverage",
            Stage::Mission => "mission",
            Stage::Simulation => "simulate",
        }
    }

    /// Command that produces the stage.
    pub fn command(self) -> &'static str {
        match self {
            Stage::Abstraction => "abstract",
            Stage::Coverage => "coverage",
            Stage::Mission => "synth",
            Stage::Simulation => "simulate",
        }
    }

    fn upstream(self) -> Option<Stage> {
        match self {
            Stage::Abstraction => None,
            Stage::Coverage => Some(Stage::Abstraction),
            Stage::Mission => Some(Stage::Coverage),
            Stage::Simulation => Some(Stage::Mission),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub scenario_hash: String,
    /// SHA-256 of the upstream manifest file.
    pub upstream: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbstractionManifest {
    pub provenance: Provenance,
    pub scenario: String,
    pub cells: usize,
    pub inputs: usize,
    pub edges: usize,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageEntry {
    pub name: String,
    /// `|A_i|`
    pub original_cells: usize,
    /// `|A'_i|`
    pub cells: usize,
    pub value: String,
    pub controller: String,
    pub cell_ids: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageManifest {
    pub provenance: Provenance,
    pub reach_solves: usize,
    pub targets: Vec<CoverageEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MissionKind {
    Cvrp,
    Tsp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LegEntry {
    pub target: usize,
    pub controller: String,
    pub bound: String,
    pub terminal: String,
    /// Coverage controller of the target fills gaps of `controller`.
    pub fallback: bool,
    /// Bound at the leg start: at the start state for the first leg, the
    /// largest over the previous target's cells otherwise.
    #[serde(with = "ext_real")]
    pub start_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleMission {
    pub tour: Vec<usize>,
    pub start: Vec<f64>,
    pub legs: Vec<LegEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionManifest {
    pub provenance: Provenance,
    pub kind: MissionKind,
    pub solver: String,
    pub capacity: Option<usize>,
    pub num_vehicles: Option<usize>,
    pub rho: Option<f64>,
    pub refined: bool,
    pub matrix: CostMatrix,
    pub plan: TourPlan,
    pub vehicles: Vec<VehicleMission>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub run: usize,
    pub total_cost: f64,
    pub complete: bool,
    pub bound_violations: usize,
    pub trajectories: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationManifest {
    pub provenance: Provenance,
    pub seed: u64,
    pub policy: String,
    pub failures: Vec<Failure>,
    pub estimate: PerformanceEstimate,
    pub runs: Vec<RunEntry>,
}

/// One row of a policy comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyResult {
    pub policy: String,
    pub first_run_cost: f64,
    pub mean_cost: f64,
    pub estimate: PerformanceEstimate,
}

/// Options of the `synth` stage.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthOptions {
    pub kind: MissionKind,
    /// Overrides the scenario's `rho`.
    pub rho: Option<f64>,
    /// Start state of a `tsp` mission; defaults to the scenario's initial state.
    pub from: Option<Vec<f64>>,
    pub refine: bool,
}

impl SynthOptions {
    pub fn new(kind: MissionKind) -> Self {
        Self { kind, rho: None, from: None, refine: true }
    }
}

/// Options of the `simulate` stage.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulateOptions {
    pub seed: u64,
    pub runs: usize,
    pub failures: Vec<Failure>,
    pub policy: String,
    pub disturbance: DisturbanceMode,
}

impl Default for SimulateOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            runs: 1,
            failures: Vec::new(),
            policy: "algorithm2".into(),
            disturbance: DisturbanceMode::UniformRandom,
        }
    }
}

/// Loaded mission stage: the plant and one schedule source per vehicle.
#[derive(Debug, Clone)]
pub struct LoadedMission {
    pub plant: Plant,
    pub manifest: MissionManifest,
    pub missions: Vec<MissionController>,
    pub starts: Vec<Vec<f64>>,
}

impl LoadedMission {
    pub fn schedules(&self) -> Vec<Box<dyn Schedule>> {
        self.missions.iter().map(|m| Box::new(FixedSchedule::new(m)) as Box<dyn Schedule>).collect()
    }
}

fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::format("manifest", e.to_string()))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// A pipeline directory with its validated scenario.
#[derive(Debug, Clone)]
pub struct Workspace {
    dir: PathBuf,
    scenario: Scenario,
}

impl Workspace {
    /// Copies `scenario` into `dir` and opens it.
    pub fn create(scenario: &Path, dir: &Path) -> Result<Self> {
        let parsed = load_scenario(scenario)?;
        fs::create_dir_all(dir)?;
        fs::copy(scenario, dir.join(SCENARIO_FILE))?;
        Ok(Self { dir: dir.to_path_buf(), scenario: parsed })
    }

    pub fn open(dir: &Path) -> Result<Self> {
        let path = dir.join(SCENARIO_FILE);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(Error::MissingArtifact { path, command: Stage::Abstraction.command() })
            }
            Err(e) => return Err(e.into()),
        };
        let scenario = parse_scenario(&text, &path.display().to_string())?;
        Ok(Self { dir: dir.to_path_buf(), scenario })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn stage_dir(&self, stage: Stage) -> PathBuf {
        self.dir.join(stage.dir())
    }

    fn manifest_path(&self, stage: Stage) -> PathBuf {
        self.stage_dir(stage).join(MANIFEST)
    }

    /// Reads and checks the manifest of `stage`; returns it with its digest.
    fn manifest<T: DeserializeOwned>(&self, stage: Stage, provenance: impl Fn(&T) -> &Provenance) -> Result<(T, String)> {
        let path = self.manifest_path(stage);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(Error::MissingArtifact { path, command: stage.command() })
            }
            Err(e) => return Err(e.into()),
        };
        let value: T = serde_json::from_slice(&bytes).map_err(|e| Error::format("manifest", format!("{}: {e}", path.display())))?;
        let p = provenance(&value);
        let stale = |reason: String| Error::StaleArtifact {
            path: path.clone(),
            reason: format!("{reason}; rerun `{}`", stage.command()),
        };
        if p.scenario_hash != self.scenario.hash {
            return Err(stale("built from a different scenario".into()));
        }
        if let Some(up) = stage.upstream() {
            let up_path = self.manifest_path(up);
            let up_bytes = match fs::read(&up_path) {
                Ok(b) => b,
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                    return Err(Error::MissingArtifact { path: up_path, command: up.command() })
                }
                Err(e) => return Err(e.into()),
            };
            if p.upstream.as_deref() != Some(digest(&up_bytes).as_str()) {
                return Err(stale(format!("the {} stage changed since it was built", up.dir())));
            }
        }
        Ok((value, digest(&bytes)))
    }

    fn provenance(&self, upstream: Option<String>) -> Provenance {
        Provenance { scenario_hash: self.scenario.hash.clone(), upstream }
    }

    /// Empties and recreates the directory of `stage`.
    fn fresh(&self, stage: Stage) -> Result<PathBuf> {
        let dir = self.stage_dir(stage);
        if dir.exists() {
            fs::remove_dir_all(&dir)?;
        }
        fs::create_dir_all(&dir)?;
        Ok(dir)
    }

    pub fn build_abstraction(&self) -> Result<AbstractionManifest> {
        let s = &self.scenario;
        log::info!("abstracting {} cells x {} inputs", s.grid.num_cells(), s.inputs.len());
        let sys = build_abstraction(&s.dynamics, &s.grid, &s.inputs, &s.cost)?;
        let dir = self.fresh(Stage::Abstraction)?;
        let file = "abstraction.socab".to_string();
        formats::save(&dir.join(&file), |w| formats::write_abstraction(w, &sys))?;
        let manifest = AbstractionManifest {
            provenance: self.provenance(None),
            scenario: s.name.clone(),
            cells: sys.num_cells(),
            inputs: sys.num_inputs(),
            edges: sys.num_edges(),
            file,
        };
        write_json(&dir.join(MANIFEST), &manifest)?;
        Ok(manifest)
    }

    pub fn abstraction(&self) -> Result<(AbstractSystem, String)> {
        let (m, d) = self.manifest::<AbstractionManifest>(Stage::Abstraction, |m| &m.provenance)?;
        let path = self.stage_dir(Stage::Abstraction).join(&m.file);
        let sys = formats::load(&path, |r| formats::read_abstraction(r, &self.scenario.grid, &self.scenario.inputs))?;
        Ok((sys, d))
    }

    pub fn build_coverage(&self) -> Result<CoverageManifest> {
        let (sys, up) = self.abstraction()?;
        let original = self.scenario.target_cells();
        log::info!("coverage over {} targets", original.len());
        let cov = solve_coverage(&sys, &original, CoverageMode::Batched)?;
        let dir = self.fresh(Stage::Coverage)?;
        let grid = sys.grid();
        let mut targets = Vec::with_capacity(cov.len());
        for (i, t) in cov.targets.iter().enumerate() {
            let value = format!("value_{i}.socvf");
            let controller = format!("controller_{i}.socct");
            formats::save(&dir.join(&value), |w| formats::write_value_function(w, grid, &t.value))?;
            formats::save(&dir.join(&controller), |w| formats::write_controller(w, grid, &t.controller))?;
            targets.push(CoverageEntry {
                name: self.scenario.targets[i].name.clone(),
                original_cells: original[i].len(),
                cells: t.cells.len(),
                value,
                controller,
                cell_ids: t.cells.clone(),
            });
        }
        let manifest = CoverageManifest { provenance: self.provenance(Some(up)), reach_solves: cov.reach_solves, targets };
        write_json(&dir.join(MANIFEST), &manifest)?;
        Ok(manifest)
    }

    pub fn coverage(&self) -> Result<(AbstractSystem, CoverageSolution, String)> {
        let (sys, _) = self.abstraction()?;
        let (m, d) = self.manifest::<CoverageManifest>(Stage::Coverage, |m| &m.provenance)?;
        if m.targets.len() != self.scenario.targets.len() {
            return Err(Error::format("coverage manifest", "target count differs from the scenario"));
        }
        let dir = self.stage_dir(Stage::Coverage);
        let grid = sys.grid();
        let targets = m
            .targets
            .iter()
            .map(|e| {
                Ok(CoverageTarget {
                    value: Arc::new(formats::load(&dir.join(&e.value), |r| formats::read_value_function(r, grid))?),
                    cells: e.cell_ids.clone(),
                    controller: Arc::new(formats::load(&dir.join(&e.controller), |r| formats::read_controller(r, grid))?),
                })
            })
            .collect::<Result<_>>()?;
        Ok((sys, CoverageSolution { targets, reach_solves: m.reach_solves }, d))
    }

    fn planner(&self, sys: AbstractSystem, cov: CoverageSolution, rho: Option<f64>) -> Planner {
        let mut p = Planner::new(Arc::new(sys), Arc::new(cov), self.scenario.target_bounds()).with_rho(rho);
        p.solver = self.scenario.routing.solver.clone();
        p
    }

    pub fn build_mission(&self, opts: &SynthOptions) -> Result<MissionManifest> {
        let (sys, cov, up) = self.coverage()?;
        let r = &self.scenario.routing;
        let rho = opts.rho.or(r.rho);
        if rho.is_some_and(|v| !(v >= 0.0)) {
            return Err(Error::validation("rho", "must be >= 0"));
        }
        let planner = self.planner(sys, cov, rho);
        let (matrix, plan, missions, starts) = match opts.kind {
            MissionKind::Cvrp => {
                let m = synthesize_cvrp(&planner, r.capacity, r.num_vehicles)?;
                let start = planner.depot_start();
                let starts = vec![start; m.missions.len()];
                (m.matrix, m.plan, m.missions, starts)
            }
            MissionKind::Tsp => {
                let x0 = opts
                    .from
                    .clone()
                    .or_else(|| r.initial_state.clone())
                    .ok_or_else(|| Error::validation("from", "a tsp mission needs --from or routing.initial_state"))?;
                let customers: Vec<usize> = (1..planner.targets.len()).collect();
                let refinement = if opts.refine { Refinement::Localized } else { Refinement::Skip };
                let m = synthesize_tsp_from_state(&planner, &customers, &x0, refinement)?;
                (m.matrix, m.plan, vec![m.mission], vec![x0])
            }
        };
        let dir = self.fresh(Stage::Mission)?;
        let grid = planner.sys.grid();
        let mut vehicles = Vec::with_capacity(missions.len());
        for (k, (mission, start)) in missions.iter().zip(&starts).enumerate() {
            let start_cell = planner.quantize(start)?;
            let mut legs = Vec::with_capacity(mission.legs.len());
            for (j, leg) in mission.legs.iter().enumerate() {
                let stem = format!("v{k}_leg{j}");
                let entry = LegEntry {
                    target: leg.target,
                    controller: format!("{stem}.socct"),
                    bound: format!("{stem}.socvf"),
                    terminal: format!("{stem}_terminal.socvf"),
                    fallback: leg.fallback.is_some(),
                    start_value: match j {
                        0 => leg.bound.get(start_cell),
                        _ => planner
                            .cov
                            .cells(mission.legs[j - 1].target)
                            .iter()
                            .map(|&c| leg.bound.get(c as usize))
                            .fold(0.0, f64::max),
                    },
                };
                let mut terminal = vec![f64::INFINITY; grid.num_cells()];
                for (c, v) in leg.terminal.iter() {
                    terminal[c as usize] = v;
                }
                let terminal = ValueFunction::new(terminal)?;
                formats::save(&dir.join(&entry.controller), |w| formats::write_controller(w, grid, &leg.controller))?;
                formats::save(&dir.join(&entry.bound), |w| formats::write_value_function(w, grid, &leg.bound))?;
                formats::save(&dir.join(&entry.terminal), |w| formats::write_value_function(w, grid, &terminal))?;
                legs.push(entry);
            }
            vehicles.push(VehicleMission { tour: mission.tour.clone(), start: start.clone(), legs });
        }
        let manifest = MissionManifest {
            provenance: self.provenance(Some(up)),
            kind: opts.kind,
            solver: planner.solver.clone(),
            capacity: r.capacity,
            num_vehicles: r.num_vehicles,
            rho,
            refined: opts.kind == MissionKind::Cvrp || opts.refine,
            matrix,
            plan,
            vehicles,
        };
        write_json(&dir.join(MANIFEST), &manifest)?;
        Ok(manifest)
    }

    pub fn mission(&self) -> Result<(LoadedMission, String)> {
        let (sys, cov, _) = self.coverage()?;
        let (m, d) = self.manifest::<MissionManifest>(Stage::Mission, |m| &m.provenance)?;
        let planner = self.planner(sys, cov, m.rho);
        let dir = self.stage_dir(Stage::Mission);
        let grid = planner.sys.grid();
        let mut missions = Vec::with_capacity(m.vehicles.len());
        for v in &m.vehicles {
            let mut legs = Vec::with_capacity(v.legs.len());
            for e in &v.legs {
                if e.target >= planner.cov.len() {
                    return Err(Error::format("mission manifest", format!("target {} out of range", e.target)));
                }
                let terminal = formats::load(&dir.join(&e.terminal), |r| formats::read_value_function(r, grid))?;
                let pairs = (0..terminal.len())
                    .filter(|&c| terminal.is_finite(c))
                    .map(|c| (c as u32, terminal.get(c)))
                    .collect();
                legs.push(Leg {
                    target: e.target,
                    controller: Arc::new(formats::load(&dir.join(&e.controller), |r| formats::read_controller(r, grid))?),
                    fallback: e.fallback.then(|| planner.cov.targets[e.target].controller.clone()),
                    terminal: Arc::new(TerminalCost::new(pairs)?),
                    bound: Arc::new(formats::load(&dir.join(&e.bound), |r| formats::read_value_function(r, grid))?),
                });
            }
            missions.push(MissionController { tour: v.tour.clone(), legs });
        }
        let starts = m.vehicles.iter().map(|v| v.start.clone()).collect();
        let plant = Plant { dynamics: self.scenario.dynamics.clone(), cost: self.scenario.cost.clone(), planner };
        Ok((LoadedMission { plant, manifest: m, missions, starts }, d))
    }

    pub fn simulate(&self, opts: &SimulateOptions) -> Result<(SimulationManifest, Vec<MissionReport>)> {
        let (mission, up) = self.mission()?;
        let mut cfg = SimConfig::new(DisturbancePolicy { mode: opts.disturbance, seed: opts.seed }, self.scenario.routing.max_steps);
        cfg.failures = opts.failures.clone();
        cfg.policy = opts.policy.clone();
        log::info!("simulating {} runs", opts.runs);
        let (estimate, runs) = estimate_performance(&mission.plant, || mission.schedules(), &mission.starts, &cfg, opts.runs)?;
        let dir = self.fresh(Stage::Simulation)?;
        let n = self.scenario.grid.dim();
        let m = self.scenario.inputs.dim();
        let mut entries = Vec::with_capacity(runs.len());
        let mut reports = Vec::with_capacity(runs.len());
        for (r, run) in runs.into_iter().enumerate() {
            let mut files = Vec::with_capacity(run.trajectories.len());
            for t in &run.trajectories {
                let file = format!("run{r:03}_vehicle{}.csv", t.vehicle);
                let mut out = std::io::BufWriter::new(fs::File::create(dir.join(&file))?);
                t.write_csv(&mut out, n, m)?;
                std::io::Write::flush(&mut out)?;
                files.push(file);
            }
            entries.push(RunEntry {
                run: r,
                total_cost: run.report.total_cost,
                complete: run.report.complete,
                bound_violations: run.report.bound_violations,
                trajectories: files,
            });
            reports.push(run.report);
        }
        let manifest = SimulationManifest {
            provenance: self.provenance(Some(up)),
            seed: opts.seed,
            policy: opts.policy.clone(),
            failures: opts.failures.clone(),
            estimate,
            runs: entries,
        };
        write_json(&dir.join("report.json"), &reports)?;
        write_json(&dir.join(MANIFEST), &manifest)?;
        Ok((manifest, reports))
    }

    /// Runs the simulation once per takeover policy with the same seeds and
    /// writes `simulate/comparison.json`. Requires the simulate stage.
    pub fn compare(&self, opts: &SimulateOptions, policies: &[&str]) -> Result<Vec<PolicyResult>> {
        let (mission, _) = self.mission()?;
        self.manifest::<SimulationManifest>(Stage::Simulation, |m| &m.provenance)?;
        let mut out = Vec::with_capacity(policies.len());
        for &p in policies {
            let mut cfg = SimConfig::new(DisturbancePolicy { mode: opts.disturbance, seed: opts.seed }, self.scenario.routing.max_steps);
            cfg.failures = opts.failures.clone();
            cfg.policy = p.to_string();
            let (estimate, runs) = estimate_performance(&mission.plant, || mission.schedules(), &mission.starts, &cfg, opts.runs)?;
            let mean_cost = estimate.costs.iter().sum::<f64>() / estimate.costs.len() as f64;
            out.push(PolicyResult {
                policy: p.to_string(),
                mean_cost,
                first_run_cost: runs[0].report.total_cost,
                estimate,
            });
        }
        write_json(&self.stage_dir(Stage::Simulation).join("comparison.json"), &out)?;
        Ok(out)
    }

    /// Planar tracks `(x1, x2)` of the first simulated run, one per vehicle;
    /// empty when nothing was simulated.
    pub fn tracks(&self) -> Result<Vec<Vec<(f64, f64)>>> {
        if !self.manifest_path(Stage::Simulation).exists() {
            return Ok(Vec::new());
        }
        let (m, _) = self.manifest::<SimulationManifest>(Stage::Simulation, |m| &m.provenance)?;
        let Some(first) = m.runs.first() else {
            return Ok(Vec::new());
        };
        let dir = self.stage_dir(Stage::Simulation);
        first.trajectories.iter().map(|f| read_track(&dir.join(f))).collect()
    }
}

fn read_track(path: &Path) -> Result<Vec<(f64, f64)>> {
    let text = fs::read_to_string(path)?;
    let bad = |line: usize| Error::format("trajectory", format!("{}:{line}", path.display()));
    text.lines()
        .enumerate()
        .skip(1)
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| {
            let mut cols = l.split(',').skip(1);
            let mut next = || cols.next().and_then(|v| v.parse::<f64>().ok()).ok_or_else(|| bad(i + 1));
            Ok((next()?, next()?))
        })
        .collect()
}
