//! Coverage: reach controllers for several targets whose shrunken target sets
//! `A'_i` can all reach one another.
//!
//! Starting from `A'_i = A_i`, each target is solved with `G0 ≡ 0` on `A'_i`
//! and every other `A'_j` loses the cells from which target `i` is
//! unreachable. Shrunken targets are solved again until nothing changes. The
//! result is the largest family with that property, so it does not depend on
//! the processing order.

use std::collections::VecDeque;
use std::sync::Arc;

use rayon::prelude::*;

use crate::abstraction::AbstractSystem;
use crate::error::{Error, Result};
use crate::reach::{solve_reach, MemorylessController, TerminalCost, ValueFunction};

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageTarget {
    /// Value function `V_i` for reaching `A'_i` with zero terminal cost.
    pub value: Arc<ValueFunction>,
    /// The shrunken target `A'_i`, sorted.
    pub cells: Vec<u32>,
    pub controller: Arc<MemorylessController>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageSolution {
    pub targets: Vec<CoverageTarget>,
    /// Number of reach solves performed.
    pub reach_solves: usize,
}

impl CoverageSolution {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn value(&self, i: usize) -> &ValueFunction {
        &self.targets[i].value
    }

    pub fn cells(&self, i: usize) -> &[u32] {
        &self.targets[i].cells
    }

    pub fn controller(&self, i: usize) -> &MemorylessController {
        &self.targets[i].controller
    }

    /// Union of all `A'_i`, sorted.
    pub fn union_cells(&self) -> Vec<u32> {
        let mut all: Vec<u32> = self.targets.iter().flat_map(|t| t.cells.iter().copied()).collect();
        all.sort_unstable();
        all.dedup();
        all
    }

    /// Checks `A'_i ⊆ A_i`, `A'_i ≠ ∅` and `V_i < ∞` on every `A'_j`.
    pub fn check(&self, original: &[Vec<u32>]) -> std::result::Result<(), String> {
        if original.len() != self.targets.len() {
            return Err("target count differs".into());
        }
        for (i, t) in self.targets.iter().enumerate() {
            if t.cells.is_empty() {
                return Err(format!("A'_{i} is empty"));
            }
            let mut a = original[i].clone();
            a.sort_unstable();
            if let Some(c) = t.cells.iter().find(|c| a.binary_search(c).is_err()) {
                return Err(format!("A'_{i} contains cell {c} outside A_{i}"));
            }
            for (j, other) in self.targets.iter().enumerate() {
                if let Some(c) = other.cells.iter().find(|&&c| !t.value.is_finite(c as usize)) {
                    return Err(format!("V_{i} is infinite on cell {c} of A'_{j}"));
                }
            }
        }
        Ok(())
    }
}

/// How queued targets are processed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CoverageMode {
    /// One target at a time, first in first out.
    #[default]
    Fifo,
    /// All queued targets are solved in parallel, then shrinks are applied in
    /// index order.
    Batched,
}

/// Solves the coverage problem for the given target cell sets.
///
/// Returns [`Error::Infeasible`] if some shrunken target becomes empty.
pub fn solve_coverage(sys: &AbstractSystem, targets: &[Vec<u32>], mode: CoverageMode) -> Result<CoverageSolution> {
    match mode {
        CoverageMode::Fifo => solve_coverage_ordered(sys, targets, |_| 0),
        CoverageMode::Batched => solve_batched(sys, targets),
    }
}

/// Sequential variant where `pick` chooses the position in the queue that is
/// processed next (`0` gives FIFO order).
pub fn solve_coverage_ordered<F>(sys: &AbstractSystem, targets: &[Vec<u32>], mut pick: F) -> Result<CoverageSolution>
where
    F: FnMut(&[usize]) -> usize,
{
    let mut state = State::new(sys, targets)?;
    let mut queue: VecDeque<usize> = (0..targets.len()).collect();
    while !queue.is_empty() {
        let slice: Vec<usize> = queue.iter().copied().collect();
        let pos = pick(&slice).min(slice.len() - 1);
        let i = queue.remove(pos).expect("position in range");
        let solved = state.solve(sys, i);
        state.install(i, solved);
        for j in state.shrink_others(i)? {
            if !queue.contains(&j) {
                queue.push_back(j);
            }
        }
    }
    Ok(state.finish())
}

fn solve_batched(sys: &AbstractSystem, targets: &[Vec<u32>]) -> Result<CoverageSolution> {
    let mut state = State::new(sys, targets)?;
    let mut batch: Vec<usize> = (0..targets.len()).collect();
    while !batch.is_empty() {
        let solved: Vec<_> = batch.par_iter().map(|&i| state.solve(sys, i)).collect();
        for (&i, s) in batch.iter().zip(solved) {
            state.install(i, s);
        }
        let mut next = Vec::new();
        for &i in &batch {
            next.extend(state.shrink_others(i)?);
        }
        next.sort_unstable();
        next.dedup();
        batch = next;
    }
    Ok(state.finish())
}

struct State {
    cells: Vec<Vec<u32>>,
    solved: Vec<Option<(ValueFunction, MemorylessController)>>,
    reach_solves: usize,
}

impl State {
    fn new(sys: &AbstractSystem, targets: &[Vec<u32>]) -> Result<Self> {
        if targets.is_empty() {
            return Err(Error::validation("targets", "at least one target is required"));
        }
        let mut cells = Vec::with_capacity(targets.len());
        for (i, t) in targets.iter().enumerate() {
            let mut t = t.clone();
            t.sort_unstable();
            t.dedup();
            if t.is_empty() {
                return Err(Error::validation(format!("targets[{i}]"), "covers no grid cell"));
            }
            if t.iter().any(|&c| c as usize >= sys.num_cells()) {
                return Err(Error::validation(format!("targets[{i}]"), "names an unknown cell"));
            }
            cells.push(t);
        }
        Ok(Self { solved: vec![None; cells.len()], cells, reach_solves: 0 })
    }

    fn solve(&self, sys: &AbstractSystem, i: usize) -> (ValueFunction, MemorylessController) {
        solve_reach(sys, &TerminalCost::zero_on(&self.cells[i]))
    }

    fn install(&mut self, i: usize, solved: (ValueFunction, MemorylessController)) {
        self.reach_solves += 1;
        self.solved[i] = Some(solved);
    }

    /// Removes cells unreachable for target `i` from every other target and
    /// returns the indices that shrank.
    fn shrink_others(&mut self, i: usize) -> Result<Vec<usize>> {
        let value = &self.solved[i].as_ref().expect("solved before shrinking").0;
        let mut shrunk = Vec::new();
        for j in 0..self.cells.len() {
            if j == i {
                continue;
            }
            let before = self.cells[j].len();
            self.cells[j].retain(|&c| value.is_finite(c as usize));
            if self.cells[j].is_empty() {
                return Err(Error::Infeasible(format!(
                    "coverage: no cell of target {j} can reach target {i}; the problem can't be solved"
                )));
            }
            if self.cells[j].len() != before {
                shrunk.push(j);
            }
        }
        Ok(shrunk)
    }

    fn finish(self) -> CoverageSolution {
        let targets = self
            .cells
            .into_iter()
            .zip(self.solved)
            .map(|(cells, s)| {
                let (v, mu) = s.expect("every target solved at least once");
                CoverageTarget { value: Arc::new(v), cells, controller: Arc::new(mu) }
            })
            .collect();
        CoverageSolution { targets, reach_solves: self.reach_solves }
    }
}
