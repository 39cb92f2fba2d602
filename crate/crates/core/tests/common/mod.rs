//! Fixtures and independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::BinaryHeap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use symroute::abstraction::AbstractSystem;
use symroute::bounds::Bounds;
use symroute::cost::RunningCostSpec;
use symroute::dynamics::{model_registry, SampledDynamics};
use symroute::grid::{Grid, InputSet};
use symroute::routing::CostMatrix;

pub const TAU: f64 = std::f64::consts::TAU;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Dubins car with the UAV inputs and a given disturbance box.
pub fn dubins(tau: f64, w: [f64; 3]) -> SampledDynamics {
    SampledDynamics::new(
        model_registry().get("dubins").unwrap(),
        3,
        tau,
        Bounds::new(vec![20.0, -0.5], vec![50.0, 0.5]).unwrap(),
        Bounds::closed(w.iter().map(|v| -v).collect(), w.to_vec()).unwrap(),
    )
    .unwrap()
}

pub fn dubins_grid(nx: usize, ny: usize, nt: usize) -> Grid {
    Grid::new(
        Bounds::new(vec![0.0, 0.0, 0.0], vec![300.0, 250.0, TAU]).unwrap(),
        vec![nx, ny, nt],
        vec![false, false, true],
    )
    .unwrap()
}

pub fn dubins_inputs() -> InputSet {
    InputSet::new(Bounds::new(vec![20.0, -0.5], vec![50.0, 0.5]).unwrap(), vec![3, 3]).unwrap()
}

pub fn dubins_cost(tau: f64, grid: &Grid) -> RunningCostSpec {
    let mut c = RunningCostSpec::time_turn(tau, 1.0, 1, grid.domain().clone(), grid.periodic().to_vec());
    c.obstacles.push(Bounds::new(vec![130.0, 80.0, 0.0], vec![170.0, 170.0, TAU]).unwrap());
    c
}

/// Random explicit system. `max_succ = 1` gives a deterministic one. About
/// `blocked` of the pairs get cost `∞`; costs are multiples of 1/4 when
/// `dyadic`, so sums are exact.
pub fn random_system(r: &mut ChaCha8Rng, n: usize, m: usize, max_succ: usize, blocked: f64, dyadic: bool) -> AbstractSystem {
    let mut lists = Vec::with_capacity(n * m);
    let mut costs = Vec::with_capacity(n * m);
    for _ in 0..n * m {
        let k = r.random_range(1..=max_succ);
        lists.push((0..k).map(|_| r.random_range(0..n) as u32).collect());
        let c = if r.random_bool(blocked) {
            f64::INFINITY
        } else if dyadic {
            r.random_range(0..12) as f64 * 0.25
        } else {
            r.random_range(0.0..10.0)
        };
        costs.push(c);
    }
    AbstractSystem::explicit(n, m, lists, costs).unwrap()
}

/// Dijkstra on the reversed graph of a deterministic system.
pub fn dijkstra_oracle(sys: &AbstractSystem, g0: &[(u32, f64)]) -> Vec<f64> {
    #[derive(PartialEq)]
    struct E(f64, usize);
    impl Eq for E {}
    impl PartialOrd for E {
        fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
            Some(self.cmp(o))
        }
    }
    impl Ord for E {
        fn cmp(&self, o: &Self) -> std::cmp::Ordering {
            o.0.total_cmp(&self.0).then(o.1.cmp(&self.1))
        }
    }
    let n = sys.num_cells();
    let m = sys.num_inputs();
    let mut rev: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for c in 0..n {
        for u in 0..m {
            let s = sys.successors(c, u);
            assert_eq!(s.len(), 1);
            rev[s[0] as usize].push((c, sys.edge_cost(c, u)));
        }
    }
    let mut dist = vec![f64::INFINITY; n];
    let mut heap = BinaryHeap::new();
    for &(c, v) in g0 {
        if v < dist[c as usize] {
            dist[c as usize] = v;
            heap.push(E(v, c as usize));
        }
    }
    while let Some(E(d, c)) = heap.pop() {
        if d > dist[c] {
            continue;
        }
        for &(p, w) in &rev[c] {
            if d + w < dist[p] {
                dist[p] = w + d;
                heap.push(E(w + d, p));
            }
        }
    }
    dist
}

/// Backward value iteration from `∞`: `n + 1` sweeps of
/// `V(x) = min(G0(x), min_u c(x,u) + max_{y} V(y))`.
pub fn value_iteration_oracle(sys: &AbstractSystem, g0: &[(u32, f64)]) -> Vec<f64> {
    let n = sys.num_cells();
    let mut g = vec![f64::INFINITY; n];
    for &(c, v) in g0 {
        g[c as usize] = g[c as usize].min(v);
    }
    let mut v = g.clone();
    for _ in 0..=n {
        let next: Vec<f64> = (0..n)
            .map(|c| {
                let mut best = g[c];
                for u in 0..sys.num_inputs() {
                    let cost = sys.edge_cost(c, u);
                    if cost.is_infinite() {
                        continue;
                    }
                    let worst = sys.successors(c, u).iter().map(|&s| v[s as usize]).fold(0.0, f64::max);
                    best = best.min(cost + worst);
                }
                best
            })
            .collect();
        if next == v {
            break;
        }
        v = next;
    }
    v
}

pub fn random_matrix(r: &mut ChaCha8Rng, n: usize) -> CostMatrix {
    let entries = (0..n * n).map(|_| r.random_range(1.0..100.0f64).round()).collect();
    CostMatrix::new(n, entries).unwrap()
}

/// All permutations of `items`.
pub fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.is_empty() {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let x = rest.remove(i);
        for mut p in permutations(&rest) {
            p.insert(0, x);
            out.push(p);
        }
    }
    out
}

pub fn best_route(c: &CostMatrix, customers: &[usize]) -> f64 {
    permutations(customers)
        .into_iter()
        .map(|p| {
            let mut cost = 0.0;
            let mut at = 0;
            for &s in &p {
                cost += c.get(at, s);
                at = s;
            }
            cost + c.get(at, 0)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Exhaustive CVRP: every set partition of the customers into groups of at
/// most `q`, each group routed optimally.
pub fn cvrp_oracle(c: &CostMatrix, q: Option<usize>, num_vehicles: Option<usize>) -> f64 {
    fn rec(
        c: &CostMatrix,
        rest: &[usize],
        groups: &mut Vec<Vec<usize>>,
        q: usize,
        m: Option<usize>,
        best: &mut f64,
    ) {
        let Some((&first, tail)) = rest.split_first() else {
            if m.is_none_or(|m| m == groups.len()) {
                let total: f64 = groups.iter().map(|g| best_route(c, g)).sum();
                *best = best.min(total);
            }
            return;
        };
        for i in 0..groups.len() {
            if groups[i].len() < q {
                groups[i].push(first);
                rec(c, tail, groups, q, m, best);
                groups[i].pop();
            }
        }
        groups.push(vec![first]);
        rec(c, tail, groups, q, m, best);
        groups.pop();
    }
    let customers: Vec<usize> = (1..c.n()).collect();
    let mut best = f64::INFINITY;
    rec(c, &customers, &mut Vec::new(), q.unwrap_or(usize::MAX), num_vehicles, &mut best);
    best
}

pub fn arc<T>(v: T) -> Arc<T> {
    Arc::new(v)
}
