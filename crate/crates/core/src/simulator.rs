//! Closed-loop simulation of mission controllers on the concrete dynamics.
//!
//! Every sampling instant each vehicle quantizes its state, asks its active
//! leg for an action and either stops (switching to the next leg at the same
//! instant) or applies the input for one period under a sampled disturbance.
//! Vehicles advance in lockstep so failures can be injected on a global clock.

use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost::RunningCostSpec;
use crate::dynamics::{DisturbanceMode, DisturbancePolicy, DisturbanceSource, SampledDynamics};
use crate::error::{Error, Result};
use crate::formats::ext_real;
use crate::mission::{nearest_vehicle, takeover_registry, FixedSchedule, Leg, Planner, Schedule, TakeoverPolicy};

/// Slack allowed in the per-leg cost bound check.
pub const BOUND_TOL: f64 = 1e-9;

/// Everything a run needs besides the schedules.
#[derive(Debug, Clone)]
pub struct Plant {
    pub dynamics: SampledDynamics,
    pub cost: RunningCostSpec,
    pub planner: Planner,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Failure {
    pub vehicle: usize,
    pub step: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub disturbance: DisturbancePolicy,
    pub max_steps: usize,
    pub failures: Vec<Failure>,
    /// Takeover policy name, see [`takeover_registry`].
    pub policy: String,
}

impl SimConfig {
    pub fn new(disturbance: DisturbancePolicy, max_steps: usize) -> Self {
        Self { disturbance, max_steps, failures: Vec::new(), policy: "algorithm2".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: usize,
    pub x: Vec<f64>,
    /// Input applied on `[t, t+1)`; zeros on stop rows.
    pub u: Vec<f64>,
    /// Disturbance applied on `[t, t+1)`; zeros on stop rows.
    pub w: Vec<f64>,
    pub v: bool,
    pub leg: usize,
    pub target: usize,
    /// Cost accumulated before instant `t`.
    pub cum_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub vehicle: usize,
    pub samples: Vec<Sample>,
}

pub fn csv_header(state_dim: usize, input_dim: usize) -> String {
    let mut cols = vec!["t".to_string()];
    cols.extend((1..=state_dim).map(|i| format!("x{i}")));
    cols.extend((1..=input_dim).map(|i| format!("u{i}")));
    cols.extend(["v", "leg", "target", "cum_cost"].map(String::from));
    cols.join(",")
}

impl Trajectory {
    pub fn write_csv<W: Write>(&self, mut out: W, state_dim: usize, input_dim: usize) -> std::io::Result<()> {
        writeln!(out, "{}", csv_header(state_dim, input_dim))?;
        for s in &self.samples {
            let mut row = vec![s.t.to_string()];
            row.extend(s.x.iter().map(|v| v.to_string()));
            row.extend(s.u.iter().map(|v| v.to_string()));
            row.push(u8::from(s.v).to_string());
            row.push(s.leg.to_string());
            row.push(s.target.to_string());
            row.push(s.cum_cost.to_string());
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LegRecord {
    pub leg: usize,
    pub target: usize,
    pub start_step: usize,
    /// `None` if the leg was abandoned or the run ended first.
    pub stop_step: Option<usize>,
    pub start_cell: usize,
    /// Worst-case bound of the leg at its start cell.
    #[serde(with = "ext_real")]
    pub bound: f64,
    /// Running cost accumulated on the leg.
    pub cost: f64,
    /// `G0` at the stop cell, if the leg stopped.
    pub terminal: Option<f64>,
    pub fallback_steps: usize,
    pub within_bound: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Visit {
    pub target: usize,
    pub vehicle: usize,
    pub step: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TakeoverRecord {
    pub failed: usize,
    pub step: usize,
    pub by: Option<usize>,
    pub policy: String,
    /// The takeover vehicle finished its current leg before replanning.
    pub deferred: bool,
    pub customers: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleReport {
    pub vehicle: usize,
    pub cost: f64,
    pub steps: usize,
    pub legs: Vec<LegRecord>,
    pub failed_at: Option<usize>,
    pub finished: bool,
    pub in_depot: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionReport {
    pub vehicles: Vec<VehicleReport>,
    pub total_cost: f64,
    pub visits: Vec<Visit>,
    pub takeovers: Vec<TakeoverRecord>,
    pub complete: bool,
    pub steps: usize,
    pub bound_violations: usize,
    pub diverged: bool,
}

impl MissionReport {
    /// Sum over completed legs of the bound at their start cells.
    pub fn bound_sum(&self) -> f64 {
        self.vehicles.iter().flat_map(|v| &v.legs).map(|l| l.bound).sum()
    }
}

struct Active {
    leg: Leg,
    index: usize,
    start_step: usize,
    start_cell: usize,
    bound: f64,
    cost: f64,
    fallback_steps: usize,
}

struct VehicleRun {
    id: usize,
    x: Vec<f64>,
    schedule: Box<dyn Schedule>,
    active: Option<Active>,
    legs_started: usize,
    cum_cost: f64,
    steps: usize,
    source: DisturbanceSource,
    samples: Vec<Sample>,
    records: Vec<LegRecord>,
    failed_at: Option<usize>,
    finished: bool,
}

impl VehicleRun {
    fn new(id: usize, x0: Vec<f64>, schedule: Box<dyn Schedule>, source: DisturbanceSource) -> Self {
        Self {
            id,
            x: x0,
            schedule,
            active: None,
            legs_started: 0,
            cum_cost: 0.0,
            steps: 0,
            source,
            samples: Vec::new(),
            records: Vec::new(),
            failed_at: None,
            finished: false,
        }
    }

    fn row(&self, t: usize, u: Vec<f64>, w: Vec<f64>, v: bool, leg: usize, target: usize) -> Sample {
        Sample { t, x: self.x.clone(), u, w, v, leg, target, cum_cost: self.cum_cost }
    }

    fn close(&mut self, stop: Option<(usize, f64)>) {
        if let Some(a) = self.active.take() {
            let stop_step = stop.map(|s| s.0);
            let terminal = stop.map(|s| s.1);
            let within_bound = terminal.is_none_or(|g0| a.cost + g0 <= a.bound + BOUND_TOL);
            self.records.push(LegRecord {
                leg: a.index,
                target: a.leg.target,
                start_step: a.start_step,
                stop_step,
                start_cell: a.start_cell,
                bound: a.bound,
                cost: a.cost,
                terminal,
                fallback_steps: a.fallback_steps,
                within_bound,
            });
        }
    }

    /// Runs the vehicle through instant `t`: leg switches happen at `t`, and at
    /// most one sampling period is applied.
    fn advance(&mut self, t: usize, plant: &Plant, visited: &[bool]) -> Result<()> {
        if self.finished {
            return Ok(());
        }
        let sys = &plant.planner.sys;
        let grid = sys.grid();
        loop {
            let cell = grid.quantize(&self.x)?;
            if self.active.is_none() {
                match self.schedule.next_leg(&self.x, cell, visited)? {
                    None => {
                        self.finished = true;
                        return Ok(());
                    }
                    Some(leg) => {
                        let bound = leg.bound.get(cell);
                        self.active = Some(Active {
                            leg,
                            index: self.legs_started,
                            start_step: t,
                            start_cell: cell,
                            bound,
                            cost: 0.0,
                            fallback_steps: 0,
                        });
                        self.legs_started += 1;
                    }
                }
            }
            let active = self.active.as_ref().expect("leg is active");
            let (index, target) = (active.index, active.leg.target);
            let Some((action, fallback)) = active.leg.action(cell) else {
                return Err(Error::ControllerDomain { vehicle: self.id, leg: index, cell });
            };
            if action.stop {
                let g0 = active.leg.terminal.get(cell).unwrap_or(f64::INFINITY);
                let zeros_u = vec![0.0; sys.inputs().dim()];
                let zeros_w = vec![0.0; plant.dynamics.disturbance().dim()];
                let row = self.row(t, zeros_u, zeros_w, true, index, target);
                self.samples.push(row);
                self.close(Some((t, g0)));
                continue;
            }
            let u = sys.inputs().value(action.input as usize).to_vec();
            let w = self.source.sample(plant.dynamics.disturbance());
            let y = plant.dynamics.step(&self.x, &u, &w)?;
            let g = plant.cost.concrete(&self.x, &y, &u);
            let row = self.row(t, u, w, false, index, target);
            self.samples.push(row);
            self.cum_cost += g;
            self.steps += 1;
            let active = self.active.as_mut().expect("leg is active");
            active.cost += g;
            if fallback {
                active.fallback_steps += 1;
            }
            self.x = y;
            return Ok(());
        }
    }

    /// Customers this vehicle still intends to visit.
    fn intended(&self, visited: &[bool]) -> Vec<usize> {
        let mut c = self.schedule.remaining();
        if let Some(a) = &self.active {
            c.push(a.leg.target);
        }
        c.retain(|&i| i != 0 && !visited[i]);
        c.sort_unstable();
        c.dedup();
        c
    }

    fn in_depot(&self, plant: &Plant) -> bool {
        let last_stop = self.records.iter().rev().find(|r| r.stop_step.is_some());
        self.finished && last_stop.is_some_and(|r| r.target == 0)
            || plant.planner.targets[0].contains_periodic(&self.x, plant.planner.sys.grid().periodic())
    }
}

/// Takeover schedule that is planned when first asked for a leg.
struct Deferred {
    policy: Arc<dyn TakeoverPolicy>,
    planner: Planner,
    customers: Vec<usize>,
    inner: Option<Box<dyn Schedule>>,
}

impl Schedule for Deferred {
    fn next_leg(&mut self, x: &[f64], cell: usize, visited: &[bool]) -> Result<Option<Leg>> {
        if self.inner.is_none() {
            let customers: Vec<usize> = self.customers.iter().copied().filter(|&c| !visited[c]).collect();
            self.inner = Some(self.policy.plan(&self.planner, x, &customers)?);
        }
        self.inner.as_mut().expect("planned").next_leg(x, cell, visited)
    }

    fn remaining(&self) -> Vec<usize> {
        match &self.inner {
            Some(s) => s.remaining(),
            None => self.customers.clone(),
        }
    }
}

/// Runs a single leg from `x0` until it stops.
pub fn run_leg(
    plant: &Plant,
    leg: &Leg,
    x0: &[f64],
    disturbance: &DisturbancePolicy,
    max_steps: usize,
) -> Result<(Trajectory, LegRecord)> {
    let schedule = Box::new(FixedSchedule::from_legs(vec![leg.clone()]));
    let mut v = VehicleRun::new(0, x0.to_vec(), schedule, disturbance.stream(0));
    let visited = vec![false; plant.planner.targets.len()];
    for t in 0..=max_steps {
        v.advance(t, plant, &visited)?;
        if v.finished {
            let record = v.records.pop().expect("one leg ran");
            return Ok((Trajectory { vehicle: 0, samples: v.samples }, record));
        }
    }
    Err(Error::Divergence { vehicle: 0, leg: 0, steps: max_steps })
}

/// Result of [`run_mission`].
#[derive(Debug, Clone, PartialEq)]
pub struct MissionRun {
    pub trajectories: Vec<Trajectory>,
    pub report: MissionReport,
}

/// Simulates all vehicles in lockstep from `starts` with the given schedules.
pub fn run_mission(
    plant: &Plant,
    schedules: Vec<Box<dyn Schedule>>,
    starts: &[Vec<f64>],
    cfg: &SimConfig,
) -> Result<MissionRun> {
    if schedules.len() != starts.len() {
        return Err(Error::validation("simulation", "one start state per vehicle is required"));
    }
    if cfg.max_steps == 0 {
        return Err(Error::validation("simulation.max_steps", "must be > 0"));
    }
    let policy = takeover_registry().get(&cfg.policy)?;
    let targets = plant.planner.targets.clone();
    let periodic = plant.planner.sys.grid().periodic().to_vec();
    let mut vehicles: Vec<VehicleRun> = schedules
        .into_iter()
        .zip(starts)
        .enumerate()
        .map(|(k, (s, x0))| VehicleRun::new(k, x0.clone(), s, cfg.disturbance.stream(k as u64)))
        .collect();
    let mut visited = vec![false; targets.len()];
    let mut visits = Vec::new();
    let mut takeovers = Vec::new();
    let mut mark = |k: usize, x: &[f64], t: usize, visited: &mut Vec<bool>| {
        for (i, b) in targets.iter().enumerate() {
            if !visited[i] && b.contains_periodic(x, &periodic) {
                visited[i] = true;
                visits.push(Visit { target: i, vehicle: k, step: t });
            }
        }
    };
    for v in &vehicles {
        mark(v.id, &v.x, 0, &mut visited);
    }

    let mut t = 0;
    let mut diverged = true;
    while t <= cfg.max_steps {
        for f in cfg.failures.iter().filter(|f| f.step == t) {
            if f.vehicle >= vehicles.len() {
                return Err(Error::validation("simulation.failures", format!("no vehicle {}", f.vehicle)));
            }
            if vehicles[f.vehicle].failed_at.is_none() {
                takeovers.push(fail_vehicle(plant, &mut vehicles, f.vehicle, t, &visited, &policy)?);
            }
        }
        if vehicles.iter().all(|v| v.finished) {
            diverged = false;
            break;
        }
        for v in vehicles.iter_mut() {
            v.advance(t, plant, &visited)?;
            mark(v.id, &v.x, t + 1, &mut visited);
        }
        t += 1;
    }
    for v in vehicles.iter_mut() {
        v.close(None);
    }

    let vehicle_reports: Vec<VehicleReport> = vehicles
        .iter()
        .map(|v| VehicleReport {
            vehicle: v.id,
            cost: v.cum_cost,
            steps: v.steps,
            legs: v.records.clone(),
            failed_at: v.failed_at,
            finished: v.finished,
            in_depot: v.in_depot(plant),
        })
        .collect();
    let all_visited = visited.iter().skip(1).all(|&b| b);
    let home = vehicle_reports.iter().all(|v| v.finished && v.in_depot);
    let taken_over = takeovers.iter().all(|r: &TakeoverRecord| r.by.is_some());
    let bound_violations = vehicle_reports.iter().flat_map(|v| &v.legs).filter(|l| !l.within_bound).count();
    let report = MissionReport {
        total_cost: vehicle_reports.iter().map(|v| v.cost).sum(),
        vehicles: vehicle_reports,
        visits,
        takeovers,
        complete: all_visited && home && taken_over && !diverged,
        steps: t.min(cfg.max_steps),
        bound_violations,
        diverged,
    };
    let trajectories = vehicles.into_iter().map(|v| Trajectory { vehicle: v.id, samples: v.samples }).collect();
    Ok(MissionRun { trajectories, report })
}

/// Sends vehicle `f` home and hands its customers to the nearest functioning
/// vehicle.
fn fail_vehicle(
    plant: &Plant,
    vehicles: &mut [VehicleRun],
    f: usize,
    t: usize,
    visited: &[bool],
    policy: &Arc<dyn TakeoverPolicy>,
) -> Result<TakeoverRecord> {
    let planner = &plant.planner;
    let home = Leg::from_coverage(&planner.cov, 0);
    let orphaned = vehicles[f].intended(visited);
    {
        let v = &mut vehicles[f];
        v.failed_at = Some(t);
        v.finished = false;
        let cell = planner.quantize(&v.x)?;
        if home.bound.is_finite(cell) {
            v.close(None);
        }
        v.schedule = Box::new(FixedSchedule::from_legs(vec![home]));
    }

    let positions: Vec<Vec<f64>> = vehicles.iter().map(|v| v.x.clone()).collect();
    let functioning: Vec<bool> = vehicles.iter().map(|v| v.failed_at.is_none()).collect();
    let mut record = TakeoverRecord {
        failed: f,
        step: t,
        by: None,
        policy: policy.name().to_string(),
        deferred: false,
        customers: Vec::new(),
    };
    let Some(k) = nearest_vehicle(&positions, &functioning, &vehicles[f].x) else {
        return Ok(record);
    };
    let mut customers = vehicles[k].intended(visited);
    customers.extend(orphaned);
    customers.sort_unstable();
    customers.dedup();
    record.by = Some(k);
    record.customers = customers.clone();

    let v = &mut vehicles[k];
    v.finished = false;
    match policy.plan(planner, &v.x, &customers) {
        Ok(schedule) => {
            v.close(None);
            v.schedule = schedule;
        }
        Err(Error::Infeasible(_)) if v.active.is_some() => {
            record.deferred = true;
            v.schedule = Box::new(Deferred { policy: policy.clone(), planner: planner.clone(), customers, inner: None });
        }
        Err(e) => return Err(e),
    }
    Ok(record)
}

/// Sampled worst case of the mission cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceEstimate {
    /// Largest total cost over the runs; a lower bound of the true worst case.
    pub worst_cost: f64,
    pub costs: Vec<f64>,
    pub complete_runs: usize,
    pub bound_violations: usize,
    /// Runs whose cost exceeded the sum of their leg bounds.
    pub bound_sum_violations: usize,
}

/// Disturbance of run `r`: even runs draw uniformly from `W`, odd runs pick
/// corners; the seed mixes `seed` and `r`.
pub fn run_disturbance(mode: DisturbanceMode, seed: u64, r: usize) -> DisturbancePolicy {
    let mode = match mode {
        DisturbanceMode::None => DisturbanceMode::None,
        _ if r % 2 == 0 => DisturbanceMode::UniformRandom,
        _ => DisturbanceMode::CornerAdversarial,
    };
    let mixed = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (r as u64).wrapping_add(0xD1B5_4A32_D192_ED03);
    DisturbancePolicy { mode, seed: mixed }
}

/// Runs the mission `n_runs` times and reports the largest total cost.
pub fn estimate_performance<F>(
    plant: &Plant,
    schedules: F,
    starts: &[Vec<f64>],
    cfg: &SimConfig,
    n_runs: usize,
) -> Result<(PerformanceEstimate, Vec<MissionRun>)>
where
    F: Fn() -> Vec<Box<dyn Schedule>> + Sync,
{
    if n_runs == 0 {
        return Err(Error::validation("runs", "must be >= 1"));
    }
    let runs: Vec<MissionRun> = (0..n_runs)
        .into_par_iter()
        .map(|r| {
            let mut c = cfg.clone();
            c.disturbance = run_disturbance(cfg.disturbance.mode, cfg.disturbance.seed, r);
            run_mission(plant, schedules(), starts, &c)
        })
        .collect::<Result<_>>()?;
    let costs: Vec<f64> = runs.iter().map(|r| r.report.total_cost).collect();
    let estimate = PerformanceEstimate {
        worst_cost: costs.iter().copied().fold(0.0, f64::max),
        complete_runs: runs.iter().filter(|r| r.report.complete).count(),
        bound_violations: runs.iter().map(|r| r.report.bound_violations).sum(),
        bound_sum_violations: runs
            .iter()
            .filter(|r| r.report.total_cost > r.report.bound_sum() + BOUND_TOL)
            .count(),
        costs,
    };
    Ok((estimate, runs))
}
