//! Finite abstraction `(X', U', F')` of a sampled system together with the
//! worst-case running cost of every transition.
//!
//! For each cell and input the cell centre is propagated with the nominal
//! dynamics and the cell's half-widths are inflated by the model's growth
//! bound (plus disturbances). Every cell meeting the resulting box is listed as
//! a successor. Pairs whose tube leaves the domain or touches a forbidden
//! region get cost `+∞` and a self-loop, so the transition map stays strict.

use std::sync::Arc;

use rayon::prelude::*;

use crate::bounds::{Bounds, TAU};
use crate::cost::RunningCostSpec;
use crate::dynamics::SampledDynamics;
use crate::error::{Error, Result};
use crate::grid::{Grid, InputSet};

/// Forward and reverse transition lists in compressed-row form.
#[derive(Debug, Clone, PartialEq)]
pub struct Transitions {
    num_cells: usize,
    num_inputs: usize,
    offsets: Vec<usize>,
    successors: Vec<u32>,
    pred_offsets: Vec<usize>,
    predecessors: Vec<u32>,
}

impl Transitions {
    fn from_lists(num_cells: usize, num_inputs: usize, lists: Vec<Vec<u32>>) -> Self {
        let mut offsets = Vec::with_capacity(lists.len() + 1);
        offsets.push(0);
        let total: usize = lists.iter().map(Vec::len).sum();
        let mut successors = Vec::with_capacity(total);
        let mut counts = vec![0usize; num_cells + 1];
        for list in &lists {
            for &s in list {
                counts[s as usize + 1] += 1;
            }
            successors.extend_from_slice(list);
            offsets.push(successors.len());
        }
        for c in 0..num_cells {
            counts[c + 1] += counts[c];
        }
        let pred_offsets = counts.clone();
        let mut fill = counts;
        let mut predecessors = vec![0u32; total];
        for (pair, list) in lists.iter().enumerate() {
            for &s in list {
                let slot = &mut fill[s as usize];
                predecessors[*slot] = pair as u32;
                *slot += 1;
            }
        }
        Self { num_cells, num_inputs, offsets, successors, pred_offsets, predecessors }
    }

    pub fn num_edges(&self) -> usize {
        self.successors.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AbstractSystem {
    grid: Grid,
    inputs: InputSet,
    transitions: Arc<Transitions>,
    edge_cost: Vec<f64>,
}

impl AbstractSystem {
    /// Assembles a system from per-pair successor lists (pair index
    /// `cell * num_inputs + input`) and edge costs.
    pub fn from_parts(grid: Grid, inputs: InputSet, mut lists: Vec<Vec<u32>>, edge_cost: Vec<f64>) -> Result<Self> {
        let n = grid.num_cells();
        let m = inputs.len();
        if lists.len() != n * m || edge_cost.len() != n * m {
            return Err(Error::validation(
                "abstraction",
                format!("expected {} (cell, input) pairs", n * m),
            ));
        }
        if n * m > u32::MAX as usize {
            return Err(Error::validation("abstraction", "too many (cell, input) pairs"));
        }
        for (pair, list) in lists.iter_mut().enumerate() {
            if list.is_empty() {
                return Err(Error::validation(
                    "abstraction",
                    format!("pair {pair} has no successor (transition map must be strict)"),
                ));
            }
            if list.iter().any(|&s| s as usize >= n) {
                return Err(Error::validation("abstraction", format!("pair {pair} names an unknown cell")));
            }
            list.sort_unstable();
            list.dedup();
        }
        if edge_cost.iter().any(|c| c.is_nan() || *c < 0.0) {
            return Err(Error::validation("abstraction", "edge costs must be >= 0"));
        }
        let transitions = Arc::new(Transitions::from_lists(n, m, lists));
        Ok(Self { grid, inputs, transitions, edge_cost })
    }

    /// A system over `num_cells` abstract states with `num_inputs` inputs and
    /// no geometric meaning; handy for graph-level tests.
    pub fn explicit(num_cells: usize, num_inputs: usize, lists: Vec<Vec<u32>>, edge_cost: Vec<f64>) -> Result<Self> {
        let grid = Grid::new(
            Bounds::new(vec![0.0], vec![num_cells as f64])?,
            vec![num_cells],
            vec![false],
        )?;
        let values = (0..num_inputs).map(|i| vec![i as f64]).collect();
        let inputs = InputSet::from_values(Bounds::new(vec![0.0], vec![num_inputs.max(1) as f64])?, values)?;
        Self::from_parts(grid, inputs, lists, edge_cost)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn inputs(&self) -> &InputSet {
        &self.inputs
    }

    pub fn num_cells(&self) -> usize {
        self.transitions.num_cells
    }

    pub fn num_inputs(&self) -> usize {
        self.transitions.num_inputs
    }

    pub fn num_pairs(&self) -> usize {
        self.edge_cost.len()
    }

    pub fn num_edges(&self) -> usize {
        self.transitions.num_edges()
    }

    #[inline]
    pub fn pair(&self, cell: usize, input: usize) -> usize {
        cell * self.num_inputs() + input
    }

    #[inline]
    pub fn pair_successors(&self, pair: usize) -> &[u32] {
        let t = &self.transitions;
        &t.successors[t.offsets[pair]..t.offsets[pair + 1]]
    }

    pub fn successors(&self, cell: usize, input: usize) -> &[u32] {
        self.pair_successors(self.pair(cell, input))
    }

    /// Pair indices `cell * num_inputs + input` having `cell` as a successor.
    #[inline]
    pub fn predecessors(&self, cell: usize) -> &[u32] {
        let t = &self.transitions;
        &t.predecessors[t.pred_offsets[cell]..t.pred_offsets[cell + 1]]
    }

    #[inline]
    pub fn pair_cost(&self, pair: usize) -> f64 {
        self.edge_cost[pair]
    }

    pub fn edge_cost(&self, cell: usize, input: usize) -> f64 {
        self.edge_cost[self.pair(cell, input)]
    }

    pub fn edge_costs(&self) -> &[f64] {
        &self.edge_cost
    }

    /// Copy of this system sharing the transition lists but with other costs.
    pub fn with_costs(&self, edge_cost: Vec<f64>) -> Result<Self> {
        if edge_cost.len() != self.num_pairs() || edge_cost.iter().any(|c| c.is_nan() || *c < 0.0) {
            return Err(Error::validation("abstraction", "edge cost vector does not fit"));
        }
        Ok(Self { edge_cost, ..self.clone() })
    }

    /// Replaces the cost of every transition leaving a cell whose centre is
    /// farther than `rho` (per coordinate) from all of `targets` by `+∞`.
    pub fn restrict_running_cost(&self, targets: &[Bounds], rho: f64) -> Self {
        let m = self.num_inputs();
        let mut cost = self.edge_cost.clone();
        for cell in 0..self.num_cells() {
            let x = self.grid.cell_center(cell);
            let near = targets.iter().any(|t| within_rho(&self.grid, &x, t, rho));
            if !near {
                cost[cell * m..(cell + 1) * m].iter_mut().for_each(|c| *c = f64::INFINITY);
            }
        }
        Self { edge_cost: cost, ..self.clone() }
    }
}

fn within_rho(grid: &Grid, x: &[f64], target: &Bounds, rho: f64) -> bool {
    (0..x.len()).all(|j| {
        let (lo, hi) = (target.lower[j], target.upper[j]);
        let dist = if grid.periodic()[j] {
            let p = grid.period(j);
            if hi - lo >= p {
                0.0
            } else {
                // distance on the circle from x to the arc [lo, hi]
                let mid = 0.5 * (lo + hi);
                let half = 0.5 * (hi - lo);
                let off = (x[j] - mid).rem_euclid(p);
                let off = off.min(p - off);
                (off - half).max(0.0)
            }
        } else if x[j] < lo {
            lo - x[j]
        } else if x[j] > hi {
            x[j] - hi
        } else {
            0.0
        };
        dist <= rho
    })
}

/// Builds the abstraction of `dynamics` on `grid` with inputs `inputs`.
pub fn build_abstraction(
    dynamics: &SampledDynamics,
    grid: &Grid,
    inputs: &InputSet,
    cost: &RunningCostSpec,
) -> Result<AbstractSystem> {
    if dynamics.state_dim() != grid.dim() {
        return Err(Error::validation("abstraction", "dynamics and grid dimensions differ"));
    }
    if inputs.dim() != dynamics.input_bounds().dim() {
        return Err(Error::validation("abstraction", "input set and dynamics disagree"));
    }
    for &d in dynamics.model().angle_dims() {
        if !grid.periodic()[d] || (grid.period(d) - TAU).abs() > 1e-9 {
            return Err(Error::validation(
                "grid.periodic",
                format!("dimension {d} is an angle: it must be periodic with width 2π"),
            ));
        }
    }
    let n = grid.dim();
    let half: Vec<f64> = grid.cell_widths().iter().map(|w| 0.5 * w).collect();
    let radii: Vec<Vec<f64>> = inputs
        .values()
        .iter()
        .map(|u| dynamics.growth_radius(&half, u, grid.domain()))
        .collect();
    let zero = vec![0.0; n];

    let per_cell: Vec<Vec<(Vec<u32>, f64)>> = (0..grid.num_cells())
        .into_par_iter()
        .map(|cell| {
            let center = grid.cell_center(cell);
            let source = grid.cell_bounds(cell);
            inputs
                .values()
                .iter()
                .zip(&radii)
                .map(|(u, r)| {
                    let blocked = (vec![cell as u32], f64::INFINITY);
                    let Ok(y) = dynamics.step_unwrapped(&center, u, &zero) else {
                        return blocked;
                    };
                    let succ = Bounds {
                        lower: y.iter().zip(r).map(|(c, r)| c - r).collect(),
                        upper: y.iter().zip(r).map(|(c, r)| c + r).collect(),
                    };
                    let tube = source.hull(&succ);
                    if cost.tube_blocked(&tube) {
                        return blocked;
                    }
                    match grid.successor_ranges(&succ) {
                        Some(ranges) => {
                            let list = grid.expand(&ranges).into_iter().map(|c| c as u32).collect();
                            (list, cost.edge_cost(u, &y, r))
                        }
                        None => blocked,
                    }
                })
                .collect()
        })
        .collect();

    let mut lists = Vec::with_capacity(grid.num_cells() * inputs.len());
    let mut costs = Vec::with_capacity(grid.num_cells() * inputs.len());
    for (list, c) in per_cell.into_iter().flatten() {
        lists.push(list);
        costs.push(c);
    }
    AbstractSystem::from_parts(grid.clone(), inputs.clone(), lists, costs)
}
