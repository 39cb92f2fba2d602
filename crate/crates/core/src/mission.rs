//! Mission controllers: sequences of reach controllers switched on their stop
//! flag, synthesized from a coverage solution and a routing plan.
//!
//! Target 0 is the depot. A tour `[0, a, b, 0]` yields three legs with targets
//! `a`, `b` and `0`. Each leg steers into the shrunken target set `A'`.

use std::collections::{BTreeSet, VecDeque};
use std::sync::{Arc, OnceLock};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::abstraction::AbstractSystem;
use crate::bounds::Bounds;
use crate::coverage::{CoverageSolution, CoverageTarget};
use crate::error::{Error, Result};
use crate::reach::{evaluate_controller, solve_reach, Action, MemorylessController, TerminalCost, ValueFunction};
use crate::registry::Registry;
use crate::routing::{cost_matrix_from_coverage, cost_matrix_from_state, solver_registry, CostMatrix, TourPlan};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionSpec {
    /// Target boxes; index 0 is the depot.
    pub targets: Vec<Bounds>,
    /// Tour capacity `q`; `None` is unlimited.
    pub capacity: Option<usize>,
    pub num_vehicles: Option<usize>,
    pub initial_state: Option<Vec<f64>>,
    pub rho: Option<f64>,
}

impl MissionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.targets.len() < 2 {
            return Err(Error::validation("targets", "a depot and at least one customer are required"));
        }
        if self.capacity == Some(0) {
            return Err(Error::validation("routing.capacity", "must be >= 1"));
        }
        if self.num_vehicles == Some(0) {
            return Err(Error::validation("routing.num_vehicles", "must be >= 1"));
        }
        if self.rho.is_some_and(|r| r.is_nan() || r < 0.0) {
            return Err(Error::validation("routing.rho", "must be >= 0"));
        }
        Ok(())
    }
}

/// One memoryless controller of a mission together with its guarantee.
#[derive(Debug, Clone)]
pub struct Leg {
    pub target: usize,
    pub controller: Arc<MemorylessController>,
    /// Used wherever `controller` has no action.
    pub fallback: Option<Arc<MemorylessController>>,
    /// Terminal cost `G0` on the leg target.
    pub terminal: Arc<TerminalCost>,
    /// Worst-case cost-to-stop of the combined controller, `G0` included.
    pub bound: Arc<ValueFunction>,
}

impl Leg {
    /// Action at `cell` and whether it came from the fallback.
    pub fn action(&self, cell: usize) -> Option<(Action, bool)> {
        if let Some(a) = self.controller.action(cell) {
            return Some((a, false));
        }
        self.fallback.as_ref().and_then(|f| f.action(cell)).map(|a| (a, true))
    }

    /// Leg built from a coverage controller: stop anywhere in `A'_target`.
    pub fn from_coverage(cov: &CoverageSolution, target: usize) -> Self {
        let t: &CoverageTarget = &cov.targets[target];
        Self {
            target,
            controller: t.controller.clone(),
            fallback: None,
            terminal: Arc::new(TerminalCost::zero_on(&t.cells)),
            bound: t.value.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MissionController {
    /// Stops of the tour this controller realizes, depot included at both ends
    /// when the mission starts there.
    pub tour: Vec<usize>,
    pub legs: Vec<Leg>,
}

impl MissionController {
    /// Sum over legs of the bound at the start cell of each leg is only known
    /// during execution; this is the bound of the first leg at `cell`.
    pub fn start_bound(&self, cell: usize) -> f64 {
        self.legs.first().map_or(0.0, |l| l.bound.get(cell))
    }
}

/// Shared inputs of all synthesis steps.
#[derive(Debug, Clone)]
pub struct Planner {
    pub sys: Arc<AbstractSystem>,
    pub cov: Arc<CoverageSolution>,
    pub targets: Arc<Vec<Bounds>>,
    pub rho: Option<f64>,
    /// Routing strategy name, see [`solver_registry`].
    pub solver: String,
}

impl Planner {
    pub fn new(sys: Arc<AbstractSystem>, cov: Arc<CoverageSolution>, targets: Vec<Bounds>) -> Self {
        Self { sys, cov, targets: Arc::new(targets), rho: None, solver: "auto".into() }
    }

    pub fn with_rho(mut self, rho: Option<f64>) -> Self {
        self.rho = rho;
        self
    }

    pub fn quantize(&self, x: &[f64]) -> Result<usize> {
        self.sys.grid().quantize(x)
    }

    /// A start state for vehicles leaving the depot: the centre of the cell of
    /// `A'_0` closest to the centre of the depot box.
    pub fn depot_start(&self) -> Vec<f64> {
        let grid = self.sys.grid();
        let centre = self.targets[0].center();
        let cell = self
            .cov
            .cells(0)
            .iter()
            .copied()
            .min_by(|&a, &b| {
                let da = dist2(&grid.cell_center(a as usize), &centre);
                let db = dist2(&grid.cell_center(b as usize), &centre);
                da.total_cmp(&db).then(a.cmp(&b))
            })
            .expect("coverage targets are nonempty");
        grid.cell_center(cell as usize)
    }
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Output of the capacitated routing synthesis.
#[derive(Debug, Clone)]
pub struct CvrpMission {
    pub matrix: CostMatrix,
    pub plan: TourPlan,
    /// One controller per tour, in plan order.
    pub missions: Vec<MissionController>,
}

/// Terminal cost for a leg into `target` followed by `next`.
fn chained_terminal(cov: &CoverageSolution, target: usize, next: Option<usize>) -> TerminalCost {
    match next {
        Some(n) => TerminalCost::from_values(cov.cells(target), cov.value(n)),
        None => TerminalCost::zero_on(cov.cells(target)),
    }
}

/// Legs for the stops after the first one: `(target, next target)`.
fn leg_pairs(stops: &[usize]) -> Vec<(usize, Option<usize>)> {
    (1..stops.len()).map(|i| (stops[i], stops.get(i + 1).copied())).collect()
}

/// Capacitated routing: coverage cost matrix, routing plan, and one optimal
/// reach controller per tour stop with the next target's coverage value as
/// terminal cost.
pub fn synthesize_cvrp(planner: &Planner, capacity: Option<usize>, num_vehicles: Option<usize>) -> Result<CvrpMission> {
    let cov = &planner.cov;
    let matrix = cost_matrix_from_coverage(cov);
    let plan = solver_registry().get(&planner.solver)?.solve(&matrix, capacity, num_vehicles)?;
    let missions = plan
        .tours
        .iter()
        .map(|tour| {
            let legs = leg_pairs(&tour.stops)
                .into_par_iter()
                .map(|(target, next)| {
                    let terminal = chained_terminal(cov, target, next);
                    let (value, controller) = solve_reach(&planner.sys, &terminal);
                    Leg {
                        target,
                        controller: Arc::new(controller),
                        fallback: None,
                        terminal: Arc::new(terminal),
                        bound: Arc::new(value),
                    }
                })
                .collect();
            MissionController { tour: tour.stops.clone(), legs }
        })
        .collect();
    Ok(CvrpMission { matrix, plan, missions })
}

/// Output of the single-vehicle synthesis from an arbitrary state.
#[derive(Debug, Clone)]
pub struct TspMission {
    /// Global target indices of the sub-problem, depot first.
    pub subset: Vec<usize>,
    pub matrix: CostMatrix,
    pub plan: TourPlan,
    pub mission: MissionController,
}

/// How the legs of a tour from an arbitrary state are realized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Refinement {
    /// Localized optimal reach per leg with the coverage controller as
    /// fallback.
    Localized,
    /// Coverage controllers chained along the tour.
    Skip,
}

/// Single-tour synthesis from the state `x0` over the depot and `customers`
/// (global target indices).
pub fn synthesize_tsp_from_state(
    planner: &Planner,
    customers: &[usize],
    x0: &[f64],
    refinement: Refinement,
) -> Result<TspMission> {
    let cov = &planner.cov;
    let mut subset = vec![0];
    subset.extend(customers.iter().copied().filter(|&c| c != 0).collect::<BTreeSet<_>>());
    if subset.len() < 2 {
        return Err(Error::validation("targets", "no customer left to visit"));
    }
    let x0_cell = planner.quantize(x0)?;
    let sub = CoverageSolution {
        targets: subset.iter().map(|&i| cov.targets[i].clone()).collect(),
        reach_solves: 0,
    };
    let matrix = cost_matrix_from_state(&sub, x0_cell)?;
    for j in 1..matrix.n() {
        if !matrix.get(0, j).is_finite() {
            return Err(Error::Infeasible(format!(
                "target {} cannot be reached from the initial cell {x0_cell}",
                subset[j]
            )));
        }
    }
    let plan = solver_registry().get(&planner.solver)?.solve(&matrix, None, Some(1))?;
    let stops: Vec<usize> = plan.tours[0].stops.iter().map(|&s| subset[s]).collect();
    let legs = leg_pairs(&stops)
        .into_par_iter()
        .map(|(target, next)| match refinement {
            Refinement::Skip => Leg::from_coverage(cov, target),
            Refinement::Localized => localized_leg(planner, target, next),
        })
        .collect();
    Ok(TspMission { subset, matrix, plan, mission: MissionController { tour: stops, legs } })
}

fn localized_leg(planner: &Planner, target: usize, next: Option<usize>) -> Leg {
    let cov = &planner.cov;
    let terminal = chained_terminal(cov, target, next);
    let sys = match planner.rho {
        Some(rho) => planner.sys.restrict_running_cost(std::slice::from_ref(&planner.targets[target]), rho),
        None => (*planner.sys).clone(),
    };
    let (_, controller) = solve_reach(&sys, &terminal);
    let fallback = cov.targets[target].controller.clone();
    let bound = evaluate_controller(
        &planner.sys,
        |c| controller.action(c).or_else(|| fallback.action(c)),
        &terminal,
    );
    Leg {
        target,
        controller: Arc::new(controller),
        fallback: Some(fallback),
        terminal: Arc::new(terminal),
        bound: Arc::new(bound),
    }
}

/// `argmin V_i(cell)` over unvisited customers, lowest index on ties;
/// the depot once every customer is visited.
pub fn greedy_value_policy(cov: &CoverageSolution, visited: &[bool], cell: usize) -> usize {
    (1..cov.len())
        .filter(|&i| !visited[i])
        .fold(None, |best: Option<(f64, usize)>, i| {
            let v = cov.value(i).get(cell);
            match best {
                Some((b, _)) if b <= v => best,
                _ => Some((v, i)),
            }
        })
        .map_or(0, |(_, i)| i)
}

/// Supplies legs to one vehicle, one at a time.
pub trait Schedule: Send {
    /// Next leg once the previous one stopped at state `x` (cell `cell`).
    /// `visited[i]` tells whether any vehicle has visited target `i`.
    fn next_leg(&mut self, x: &[f64], cell: usize, visited: &[bool]) -> Result<Option<Leg>>;
    /// Customers this schedule still intends to visit.
    fn remaining(&self) -> Vec<usize>;
}

/// Executes fixed legs in order.
pub struct FixedSchedule {
    legs: VecDeque<Leg>,
}

impl FixedSchedule {
    pub fn new(mission: &MissionController) -> Self {
        Self { legs: mission.legs.iter().cloned().collect() }
    }

    pub fn from_legs(legs: Vec<Leg>) -> Self {
        Self { legs: legs.into() }
    }
}

impl Schedule for FixedSchedule {
    fn next_leg(&mut self, _x: &[f64], _cell: usize, _visited: &[bool]) -> Result<Option<Leg>> {
        Ok(self.legs.pop_front())
    }

    fn remaining(&self) -> Vec<usize> {
        self.legs.iter().map(|l| l.target).filter(|&t| t != 0).collect()
    }
}

/// Visits the customers with the smallest coverage value first, then returns
/// to the depot.
pub struct GreedySchedule {
    cov: Arc<CoverageSolution>,
    pending: BTreeSet<usize>,
    home: bool,
}

impl GreedySchedule {
    pub fn new(cov: Arc<CoverageSolution>, customers: &[usize]) -> Self {
        Self { cov, pending: customers.iter().copied().filter(|&c| c != 0).collect(), home: false }
    }
}

impl Schedule for GreedySchedule {
    fn next_leg(&mut self, _x: &[f64], cell: usize, visited: &[bool]) -> Result<Option<Leg>> {
        if self.home {
            return Ok(None);
        }
        self.pending.retain(|&i| !visited[i]);
        let mut mask = vec![true; self.cov.len()];
        for &i in &self.pending {
            mask[i] = false;
        }
        let next = greedy_value_policy(&self.cov, &mask, cell);
        if next == 0 {
            self.home = true;
        } else {
            self.pending.remove(&next);
        }
        Ok(Some(Leg::from_coverage(&self.cov, next)))
    }

    fn remaining(&self) -> Vec<usize> {
        self.pending.iter().copied().collect()
    }
}

/// Builds the schedule of the vehicle that takes over after a failure.
pub trait TakeoverPolicy: Send + Sync {
    fn name(&self) -> &'static str;
    /// Plan from state `x` over `customers`. An [`Error::Infeasible`] result
    /// means the plan cannot start from `x`; the caller may retry later.
    fn plan(&self, planner: &Planner, x: &[f64], customers: &[usize]) -> Result<Box<dyn Schedule>>;
}

struct Algorithm2(Refinement);

impl TakeoverPolicy for Algorithm2 {
    fn name(&self) -> &'static str {
        match self.0 {
            Refinement::Localized => "algorithm2",
            Refinement::Skip => "coverage-chain",
        }
    }

    fn plan(&self, planner: &Planner, x: &[f64], customers: &[usize]) -> Result<Box<dyn Schedule>> {
        if customers.is_empty() {
            return Ok(Box::new(FixedSchedule::from_legs(vec![Leg::from_coverage(&planner.cov, 0)])));
        }
        let tsp = synthesize_tsp_from_state(planner, customers, x, self.0)?;
        Ok(Box::new(FixedSchedule::new(&tsp.mission)))
    }
}

struct Greedy;

impl TakeoverPolicy for Greedy {
    fn name(&self) -> &'static str {
        "greedy"
    }

    fn plan(&self, planner: &Planner, x: &[f64], customers: &[usize]) -> Result<Box<dyn Schedule>> {
        let cell = planner.quantize(x)?;
        if customers.iter().any(|&c| !planner.cov.value(c).is_finite(cell)) || !planner.cov.value(0).is_finite(cell) {
            return Err(Error::Infeasible(format!("greedy takeover cannot start from cell {cell}")));
        }
        Ok(Box::new(GreedySchedule::new(planner.cov.clone(), customers)))
    }
}

pub fn takeover_registry() -> &'static Registry<dyn TakeoverPolicy> {
    static REGISTRY: OnceLock<Registry<dyn TakeoverPolicy>> = OnceLock::new();
    REGISTRY.get_or_init(|| {
        let mut r: Registry<dyn TakeoverPolicy> = Registry::new("takeover policy");
        r.register("algorithm2", || Arc::new(Algorithm2(Refinement::Localized)));
        r.register("coverage-chain", || Arc::new(Algorithm2(Refinement::Skip)));
        r.register("greedy", || Arc::new(Greedy));
        r
    })
}

/// The functioning vehicle closest (planar distance) to `failure`, lower
/// index on ties.
pub fn nearest_vehicle(positions: &[Vec<f64>], functioning: &[bool], failure: &[f64]) -> Option<usize> {
    let d = |p: &[f64]| (p[0] - failure[0]).hypot(p[1] - failure[1]);
    (0..positions.len())
        .filter(|&k| functioning[k])
        .fold(None, |best: Option<(f64, usize)>, k| {
            let v = d(&positions[k]);
            match best {
                Some((b, _)) if b <= v => best,
                _ => Some((v, k)),
            }
        })
        .map(|(_, k)| k)
}
