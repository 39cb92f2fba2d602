//! Optimal worst-case reach-avoid on a finite abstraction.
//!
//! The value function is the fixed point of
//!
//! ```text
//! V(c) = min( G0(c) if c ∈ A else ∞,
//!             min_u  edge_cost(c, u) + max_{s ∈ F(c, u)} V(s) )
//! ```
//!
//! reached from above, i.e. the worst-case cost-to-target. It is computed by a
//! Dijkstra-style label-setting sweep: a pair `(c, u)` becomes usable once all
//! of its successors are settled, and its candidate value is the edge cost plus
//! the largest settled successor value. Nonnegative costs make the settle order
//! monotone, so every cell is settled at its final value.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::abstraction::AbstractSystem;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ValueFunction {
    values: Vec<f64>,
}

impl ValueFunction {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| v.is_nan() || *v < 0.0) {
            return Err(Error::validation("value function", "values must be >= 0"));
        }
        Ok(Self { values })
    }

    pub fn infinite(n: usize) -> Self {
        Self { values: vec![f64::INFINITY; n] }
    }

    #[inline]
    pub fn get(&self, cell: usize) -> f64 {
        self.values[cell]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self, cell: usize) -> bool {
        self.values[cell].is_finite()
    }

    pub fn finite_cells(&self) -> usize {
        self.values.iter().filter(|v| v.is_finite()).count()
    }
}

/// Controller output on one cell: the input to apply and whether the
/// controller reports completion (`stop`), in which case the input is unused.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Action {
    pub input: u32,
    pub stop: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemorylessController {
    actions: Vec<Option<Action>>,
}

impl MemorylessController {
    pub fn new(actions: Vec<Option<Action>>) -> Self {
        Self { actions }
    }

    #[inline]
    pub fn action(&self, cell: usize) -> Option<Action> {
        self.actions.get(cell).copied().flatten()
    }

    pub fn actions(&self) -> &[Option<Action>] {
        &self.actions
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn domain_size(&self) -> usize {
        self.actions.iter().filter(|a| a.is_some()).count()
    }
}

/// Target set `A` with terminal cost `G0` on it.
#[derive(Debug, Clone, PartialEq)]
pub struct TerminalCost {
    cells: Vec<u32>,
    values: Vec<f64>,
}

impl TerminalCost {
    /// `G0 ≡ 0` on `cells`.
    pub fn zero_on(cells: &[u32]) -> Self {
        let mut cells = cells.to_vec();
        cells.sort_unstable();
        cells.dedup();
        let values = vec![0.0; cells.len()];
        Self { cells, values }
    }

    /// `G0 = v` restricted to `cells`.
    pub fn from_values(cells: &[u32], v: &ValueFunction) -> Self {
        let mut cells = cells.to_vec();
        cells.sort_unstable();
        cells.dedup();
        let values = cells.iter().map(|&c| v.get(c as usize)).collect();
        Self { cells, values }
    }

    /// Repeated cells keep their smallest value.
    pub fn new(pairs: Vec<(u32, f64)>) -> Result<Self> {
        let mut pairs = pairs;
        pairs.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
        pairs.dedup_by_key(|p| p.0);
        if pairs.iter().any(|p| p.1.is_nan() || p.1 < 0.0) {
            return Err(Error::validation("terminal cost", "values must be >= 0"));
        }
        Ok(Self { cells: pairs.iter().map(|p| p.0).collect(), values: pairs.iter().map(|p| p.1).collect() })
    }

    pub fn cells(&self) -> &[u32] {
        &self.cells
    }

    pub fn get(&self, cell: usize) -> Option<f64> {
        self.cells.binary_search(&(cell as u32)).ok().map(|i| self.values[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.cells.iter().copied().zip(self.values.iter().copied())
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}

#[derive(Clone, Copy, PartialEq)]
struct Entry {
    value: f64,
    cell: u32,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on value, then on cell id
        other.value.total_cmp(&self.value).then_with(|| other.cell.cmp(&self.cell))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Solves the reach-avoid problem on `sys` for target `target`.
///
/// Cells that cannot be forced into the target keep `V = ∞` and no action.
/// Among optimal choices the lowest input index wins and stopping is
/// preferred over moving on.
pub fn solve_reach(sys: &AbstractSystem, target: &TerminalCost) -> (ValueFunction, MemorylessController) {
    let n = sys.num_cells();
    let m = sys.num_inputs();
    let mut value = vec![f64::INFINITY; n];
    let mut rank = vec![u32::MAX; n];
    let mut remaining: Vec<u32> = (0..n * m).map(|p| sys.pair_successors(p).len() as u32).collect();
    let mut worst = vec![0.0f64; n * m];
    let mut heap = BinaryHeap::new();

    for (cell, g0) in target.iter() {
        if g0 < value[cell as usize] {
            value[cell as usize] = g0;
            heap.push(Entry { value: g0, cell });
        }
    }

    let mut settled = 0u32;
    while let Some(Entry { value: v, cell }) = heap.pop() {
        let c = cell as usize;
        if rank[c] != u32::MAX || v > value[c] {
            continue;
        }
        rank[c] = settled;
        settled += 1;
        for &pair in sys.predecessors(c) {
            let p = pair as usize;
            let cost = sys.pair_cost(p);
            if cost.is_infinite() {
                continue;
            }
            if v > worst[p] {
                worst[p] = v;
            }
            remaining[p] -= 1;
            if remaining[p] == 0 {
                let src = p / m;
                let candidate = cost + worst[p];
                if rank[src] == u32::MAX && candidate < value[src] {
                    value[src] = candidate;
                    heap.push(Entry { value: candidate, cell: src as u32 });
                }
            }
        }
    }

    // Policy extraction: among pairs whose successors were all settled
    // earlier than the cell itself, take the lowest optimal input.
    let mut actions = vec![None; n];
    for c in 0..n {
        if rank[c] == u32::MAX {
            continue;
        }
        if target.get(c) == Some(value[c]) {
            actions[c] = Some(Action { input: 0, stop: true });
            continue;
        }
        for u in 0..m {
            let p = c * m + u;
            let cost = sys.pair_cost(p);
            if cost.is_infinite() || remaining[p] != 0 {
                continue;
            }
            let succ = sys.pair_successors(p);
            if succ.iter().any(|&s| rank[s as usize] >= rank[c]) {
                continue;
            }
            if cost + worst[p] == value[c] {
                actions[c] = Some(Action { input: u as u32, stop: false });
                break;
            }
        }
        debug_assert!(actions[c].is_some(), "settled cell {c} without an optimal action");
    }

    (ValueFunction { values: value }, MemorylessController { actions })
}

/// Worst-case cost of running the fixed controller `action` until it stops,
/// plus `G0` at the stop cell. Cells whose closed loop can cycle, or that can
/// reach a cell without an action, get `∞`; so do stops outside the target.
pub fn evaluate_controller<F>(sys: &AbstractSystem, action: F, target: &TerminalCost) -> ValueFunction
where
    F: Fn(usize) -> Option<Action>,
{
    let n = sys.num_cells();
    let m = sys.num_inputs();
    let mut value = vec![f64::INFINITY; n];
    let mut pending = vec![0u32; n];
    let mut worst = vec![0.0f64; n];
    let mut counts = vec![0usize; n + 1];
    let mut ready = Vec::new();
    let chosen: Vec<Option<Action>> = (0..n).map(&action).collect();
    for (c, a) in chosen.iter().enumerate() {
        match a {
            Some(a) if a.stop => {
                if let Some(g0) = target.get(c) {
                    value[c] = g0;
                    ready.push(c);
                }
            }
            Some(a) if sys.edge_cost(c, a.input as usize).is_finite() => {
                let succ = sys.successors(c, a.input as usize);
                pending[c] = succ.len() as u32;
                for &s in succ {
                    counts[s as usize + 1] += 1;
                }
            }
            _ => {}
        }
    }
    for c in 0..n {
        counts[c + 1] += counts[c];
    }
    let mut fill = counts.clone();
    let mut dependents = vec![0u32; counts[n]];
    for (c, a) in chosen.iter().enumerate() {
        if pending[c] > 0 {
            let a = a.expect("pending cells have an action");
            for &s in sys.successors(c, a.input as usize) {
                dependents[fill[s as usize]] = c as u32;
                fill[s as usize] += 1;
            }
        }
    }
    while let Some(s) = ready.pop() {
        for &d in &dependents[counts[s]..counts[s + 1]] {
            let d = d as usize;
            worst[d] = worst[d].max(value[s]);
            pending[d] -= 1;
            if pending[d] == 0 {
                let a = chosen[d].expect("dependent has an action");
                value[d] = sys.pair_cost(d * m + a.input as usize) + worst[d];
                ready.push(d);
            }
        }
    }
    ValueFunction { values: value }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_values() {
        // a -> b -> c, c absorbing
        let sys = AbstractSystem::explicit(3, 1, vec![vec![1], vec![2], vec![2]], vec![1.0; 3]).unwrap();
        let (v, mu) = solve_reach(&sys, &TerminalCost::zero_on(&[2]));
        assert_eq!(v.values(), &[2.0, 1.0, 0.0]);
        assert_eq!(mu.action(0), Some(Action { input: 0, stop: false }));
        assert_eq!(mu.action(1), Some(Action { input: 0, stop: false }));
        assert_eq!(mu.action(2), Some(Action { input: 0, stop: true }));
    }

    #[test]
    fn everything_is_target() {
        let sys = AbstractSystem::explicit(3, 2, vec![vec![1], vec![2], vec![2], vec![0], vec![0], vec![1]], vec![1.0; 6])
            .unwrap();
        let (v, mu) = solve_reach(&sys, &TerminalCost::zero_on(&[0, 1, 2]));
        assert!(v.values().iter().all(|&x| x == 0.0));
        assert!(mu.actions().iter().all(|a| a.unwrap().stop));
    }

    #[test]
    fn min_max_step() {
        // a has one nondeterministic input to {b, c}; b -> c costs 1; c is the target
        let sys = AbstractSystem::explicit(3, 1, vec![vec![1, 2], vec![2], vec![2]], vec![1.0, 1.0, 1.0]).unwrap();
        let (v, _) = solve_reach(&sys, &TerminalCost::zero_on(&[2]));
        assert_eq!(v.get(1), 1.0);
        assert_eq!(v.get(0), 2.0);
    }

    #[test]
    fn adversary_forced_loop_is_infinite() {
        // a can land on itself: no guarantee to ever leave
        let sys = AbstractSystem::explicit(2, 1, vec![vec![0, 1], vec![1]], vec![1.0, 1.0]).unwrap();
        let (v, mu) = solve_reach(&sys, &TerminalCost::zero_on(&[1]));
        assert!(v.get(0).is_infinite());
        assert_eq!(mu.action(0), None);
    }

    #[test]
    fn zero_cost_cycle_does_not_fake_progress() {
        // input 0 loops on a for free, input 1 reaches the target at cost 3
        let sys = AbstractSystem::explicit(2, 2, vec![vec![0], vec![1], vec![1], vec![1]], vec![0.0, 3.0, 0.0, 0.0])
            .unwrap();
        let (v, mu) = solve_reach(&sys, &TerminalCost::zero_on(&[1]));
        assert_eq!(v.get(0), 3.0);
        assert_eq!(mu.action(0), Some(Action { input: 1, stop: false }));
    }

    #[test]
    fn terminal_cost_can_make_moving_better() {
        // both cells are targets; stopping at 0 costs 10, moving to 1 costs 1 + 2
        let sys = AbstractSystem::explicit(2, 1, vec![vec![1], vec![1]], vec![1.0, 1.0]).unwrap();
        let g0 = TerminalCost::new(vec![(0, 10.0), (1, 2.0)]).unwrap();
        let (v, mu) = solve_reach(&sys, &g0);
        assert_eq!(v.get(0), 3.0);
        assert_eq!(mu.action(0), Some(Action { input: 0, stop: false }));
        assert_eq!(mu.action(1), Some(Action { input: 0, stop: true }));
    }

    #[test]
    fn ties_prefer_stop_then_lowest_input() {
        let sys = AbstractSystem::explicit(3, 2, vec![vec![2], vec![2], vec![2], vec![2], vec![2], vec![2]], vec![
            1.0, 1.0, 1.0, 1.0, 1.0, 1.0,
        ])
        .unwrap();
        let g0 = TerminalCost::new(vec![(1, 1.0), (2, 0.0)]).unwrap();
        let (_, mu) = solve_reach(&sys, &g0);
        assert_eq!(mu.action(0), Some(Action { input: 0, stop: false }));
        assert_eq!(mu.action(1), Some(Action { input: 0, stop: true }));
    }

    #[test]
    fn evaluating_the_optimal_controller_gives_its_value() {
        let sys = AbstractSystem::explicit(4, 2, vec![
            vec![1, 2], vec![3],
            vec![3], vec![0],
            vec![3], vec![2],
            vec![3], vec![3],
        ], vec![1.0, 5.0, 1.0, 1.0, 2.0, 0.5, 1.0, 1.0])
        .unwrap();
        let g0 = TerminalCost::zero_on(&[3]);
        let (v, mu) = solve_reach(&sys, &g0);
        let w = evaluate_controller(&sys, |c| mu.action(c), &g0);
        assert_eq!(v, w);
        // a controller that cycles between 1 and 0 never terminates
        let w = evaluate_controller(&sys, |c| match c {
            0 => Some(Action { input: 0, stop: false }),
            1 => Some(Action { input: 1, stop: false }),
            _ => mu.action(c),
        }, &g0);
        assert!(w.get(0).is_infinite() && w.get(1).is_infinite());
        assert_eq!(w.get(2), 2.0);
    }

    #[test]
    fn empty_target() {
        let sys = AbstractSystem::explicit(2, 1, vec![vec![1], vec![0]], vec![1.0, 1.0]).unwrap();
        let (v, mu) = solve_reach(&sys, &TerminalCost::zero_on(&[]));
        assert_eq!(v.finite_cells(), 0);
        assert_eq!(mu.domain_size(), 0);
    }
}
