//! Capacitated vehicle routing over value-function cost matrices.
//!
//! Indices are 0-based; index 0 is the depot. A tour starts and ends at the
//! depot and visits each of its customers once.

use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::coverage::CoverageSolution;
use crate::error::{Error, Result};
use crate::registry::Registry;

/// Largest instance (depot included) solved exactly by the subset DP.
pub const EXACT_CVRP_MAX: usize = 12;
/// Largest instance (depot included) solved exactly by Held–Karp.
pub const HELD_KARP_MAX: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostMatrix {
    n: usize,
    #[serde(with = "crate::formats::ext_real::vec")]
    entries: Vec<f64>,
}

impl CostMatrix {
    /// Row-major `n × n` entries; the diagonal is ignored and stored as `∞`.
    pub fn new(n: usize, mut entries: Vec<f64>) -> Result<Self> {
        if entries.len() != n * n {
            return Err(Error::validation("cost matrix", format!("expected {} entries", n * n)));
        }
        if entries.iter().any(|c| c.is_nan() || *c < 0.0) {
            return Err(Error::validation("cost matrix", "entries must be >= 0"));
        }
        for i in 0..n {
            entries[i * n + i] = f64::INFINITY;
        }
        Ok(Self { n, entries })
    }

    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        Self::new(n, (0..n * n).map(|k| f(k / n, k % n)).collect())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.entries.chunks(self.n).map(<[f64]>::to_vec).collect()
    }

    /// Sub-matrix over `keep` (in that order).
    pub fn select(&self, keep: &[usize]) -> Self {
        let k = keep.len();
        let entries = (0..k * k).map(|p| self.get(keep[p / k], keep[p % k])).collect();
        let mut m = Self { n: k, entries };
        for i in 0..k {
            m.entries[i * k + i] = f64::INFINITY;
        }
        m
    }

    fn route_cost(&self, customers: &[usize]) -> f64 {
        let mut prev = 0;
        let mut total = 0.0;
        for &c in customers {
            total += self.get(prev, c);
            prev = c;
        }
        if customers.is_empty() {
            0.0
        } else {
            total + self.get(prev, 0)
        }
    }
}

/// `C[i][j] = min over p ∈ A'_i of V_j(p)`.
pub fn cost_matrix_from_coverage(cov: &CoverageSolution) -> CostMatrix {
    let n = cov.len();
    let entries = (0..n * n)
        .map(|k| {
            let (i, j) = (k / n, k % n);
            if i == j {
                return f64::INFINITY;
            }
            let vj = cov.value(j);
            cov.cells(i).iter().map(|&p| vj.get(p as usize)).fold(f64::INFINITY, f64::min)
        })
        .collect();
    CostMatrix { n, entries }
}

/// Like [`cost_matrix_from_coverage`] but the depot row holds `V_j(x0)`.
pub fn cost_matrix_from_state(cov: &CoverageSolution, x0_cell: usize) -> Result<CostMatrix> {
    if !cov.value(0).is_finite(x0_cell) {
        return Err(Error::Infeasible(format!(
            "the initial cell {x0_cell} cannot be steered back to the depot"
        )));
    }
    let mut m = cost_matrix_from_coverage(cov);
    for j in 1..m.n {
        m.entries[j] = cov.value(j).get(x0_cell);
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Tour {
    /// `[0, c1, ..., ck, 0]`
    pub stops: Vec<usize>,
}

impl Tour {
    pub fn from_customers(customers: &[usize]) -> Self {
        let mut stops = Vec::with_capacity(customers.len() + 2);
        stops.push(0);
        stops.extend_from_slice(customers);
        stops.push(0);
        Self { stops }
    }

    pub fn customers(&self) -> &[usize] {
        &self.stops[1..self.stops.len() - 1]
    }

    pub fn cost(&self, c: &CostMatrix) -> f64 {
        self.stops.windows(2).map(|w| c.get(w[0], w[1])).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TourPlan {
    pub tours: Vec<Tour>,
    pub total_cost: f64,
    /// `false` when a heuristic produced the plan.
    pub certified: bool,
}

impl TourPlan {
    fn assemble(mut tours: Vec<Tour>, c: &CostMatrix, certified: bool) -> Self {
        tours.sort();
        let total_cost = tours.iter().map(|t| t.cost(c)).sum();
        Self { tours, total_cost, certified }
    }

    /// Checks the plan against the routing constraints for `c`.
    pub fn validate(&self, c: &CostMatrix, q: Option<usize>, num_vehicles: Option<usize>) -> std::result::Result<(), String> {
        let mut seen = vec![false; c.n()];
        for t in &self.tours {
            if t.stops.len() < 3 || t.stops[0] != 0 || *t.stops.last().unwrap() != 0 {
                return Err(format!("malformed tour {:?}", t.stops));
            }
            if let Some(q) = q {
                if t.customers().len() > q {
                    return Err(format!("tour {:?} exceeds capacity {q}", t.stops));
                }
            }
            for &s in t.customers() {
                if s == 0 || s >= c.n() || seen[s] {
                    return Err(format!("customer {s} repeated or out of range"));
                }
                seen[s] = true;
            }
        }
        if let Some(k) = (1..c.n()).find(|&k| !seen[k]) {
            return Err(format!("customer {k} not visited"));
        }
        if let Some(m) = num_vehicles {
            if self.tours.len() != m {
                return Err(format!("{} tours instead of {m}", self.tours.len()));
            }
        }
        let total: f64 = self.tours.iter().map(|t| t.cost(c)).sum();
        if total != self.total_cost {
            return Err(format!("total cost {} differs from tour sum {total}", self.total_cost));
        }
        Ok(())
    }
}

/// A routing algorithm. `q = None` means unlimited capacity; `num_vehicles =
/// None` leaves the number of tours free.
pub trait RoutingSolver: Send + Sync {
    fn name(&self) -> &'static str;
    fn solve(&self, c: &CostMatrix, q: Option<usize>, num_vehicles: Option<usize>) -> Result<TourPlan>;
}

pub fn solver_registry() -> &'static Registry<dyn RoutingSolver> {
    static REGISTRY: OnceLock<Registry<dyn RoutingSolver>> = OnceLock::new();
    REGISTRY.get_or_init(|| {
        let mut r: Registry<dyn RoutingSolver> = Registry::new("routing solver");
        r.register("auto", || Arc::new(Auto));
        r.register("exact", || Arc::new(ExactCvrp));
        r.register("held-karp", || Arc::new(HeldKarp));
        r.register("savings", || Arc::new(Savings));
        r
    })
}

/// Solves with the `auto` strategy.
pub fn solve_cvrp(c: &CostMatrix, q: Option<usize>, num_vehicles: Option<usize>) -> Result<TourPlan> {
    Auto.solve(c, q, num_vehicles)
}

fn check_instance(c: &CostMatrix, q: Option<usize>, num_vehicles: Option<usize>) -> Result<()> {
    let k = c.n().saturating_sub(1);
    if k == 0 {
        return Err(Error::validation("routing", "at least one customer is required"));
    }
    if q == Some(0) {
        return Err(Error::validation("routing.capacity", "must be >= 1"));
    }
    let min_tours = q.map_or(1, |q| k.div_ceil(q));
    if let Some(m) = num_vehicles {
        if m < min_tours || m > k {
            return Err(Error::Infeasible(format!(
                "{k} customers cannot be split into {m} tours of capacity {}",
                q.map_or("∞".to_string(), |q| q.to_string())
            )));
        }
    }
    Ok(())
}

fn infeasible_if_infinite(plan: TourPlan) -> Result<TourPlan> {
    if plan.total_cost.is_finite() {
        Ok(plan)
    } else {
        Err(Error::Infeasible("no routing plan of finite cost exists".into()))
    }
}

struct Auto;

impl RoutingSolver for Auto {
    fn name(&self) -> &'static str {
        "auto"
    }

    fn solve(&self, c: &CostMatrix, q: Option<usize>, num_vehicles: Option<usize>) -> Result<TourPlan> {
        let single = num_vehicles == Some(1) && q.is_none_or(|q| q + 1 >= c.n());
        if c.n() <= EXACT_CVRP_MAX {
            ExactCvrp.solve(c, q, num_vehicles)
        } else if single && c.n() <= HELD_KARP_MAX {
            HeldKarp.solve(c, q, num_vehicles)
        } else {
            Savings.solve(c, q, num_vehicles)
        }
    }
}

/// Held–Karp over subsets of customers. `best[S][j]` is the cheapest path
/// from the depot through `S` ending at customer `j`.
struct SubsetPaths {
    k: usize,
    best: Vec<f64>,
    parent: Vec<u8>,
}

impl SubsetPaths {
    fn new(c: &CostMatrix, max_size: usize) -> Self {
        let k = c.n() - 1;
        let full = 1usize << k;
        let mut best = vec![f64::INFINITY; full * k];
        let mut parent = vec![u8::MAX; full * k];
        for j in 0..k {
            best[(1 << j) * k + j] = c.get(0, j + 1);
        }
        for s in 1..full {
            let size = s.count_ones() as usize;
            if size < 2 || size > max_size {
                continue;
            }
            for j in 0..k {
                if s & (1 << j) == 0 {
                    continue;
                }
                let prev = s & !(1 << j);
                let mut b = f64::INFINITY;
                let mut arg = u8::MAX;
                for i in 0..k {
                    if prev & (1 << i) == 0 {
                        continue;
                    }
                    let v = best[prev * k + i] + c.get(i + 1, j + 1);
                    if v < b {
                        b = v;
                        arg = i as u8;
                    }
                }
                best[s * k + j] = b;
                parent[s * k + j] = arg;
            }
        }
        Self { k, best, parent }
    }

    /// Cheapest closed tour over `s` and its last customer.
    fn closed(&self, c: &CostMatrix, s: usize) -> (f64, usize) {
        let mut b = f64::INFINITY;
        let mut arg = usize::MAX;
        for j in 0..self.k {
            if s & (1 << j) != 0 {
                let v = self.best[s * self.k + j] + c.get(j + 1, 0);
                if v < b {
                    b = v;
                    arg = j;
                }
            }
        }
        (b, arg)
    }

    fn customers(&self, mut s: usize, mut last: usize) -> Vec<usize> {
        let mut rev = Vec::new();
        while s != 0 {
            rev.push(last + 1);
            let p = self.parent[s * self.k + last];
            s &= !(1 << last);
            last = p as usize;
        }
        rev.reverse();
        rev
    }
}

/// Exact CVRP: Held–Karp per subset of at most `q` customers, combined by a
/// set-partition DP. Practical up to [`EXACT_CVRP_MAX`] targets.
pub struct ExactCvrp;

impl RoutingSolver for ExactCvrp {
    fn name(&self) -> &'static str {
        "exact"
    }

    fn solve(&self, c: &CostMatrix, q: Option<usize>, num_vehicles: Option<usize>) -> Result<TourPlan> {
        check_instance(c, q, num_vehicles)?;
        if c.n() > EXACT_CVRP_MAX {
            return Err(Error::validation(
                "routing",
                format!("exact solver handles at most {EXACT_CVRP_MAX} targets, got {}", c.n()),
            ));
        }
        let k = c.n() - 1;
        let cap = q.unwrap_or(k).min(k);
        let paths = SubsetPaths::new(c, cap);
        let full = (1usize << k) - 1;
        let mut tour_cost = vec![(f64::INFINITY, usize::MAX); full + 1];
        for (s, slot) in tour_cost.iter_mut().enumerate().skip(1) {
            if s.count_ones() as usize <= cap {
                *slot = paths.closed(c, s);
            }
        }
        // part[m][mask]: cheapest split of `mask` into m tours; the tour
        // holding the lowest customer of `mask` is chosen first.
        let max_tours = num_vehicles.unwrap_or(k);
        let mut part = vec![vec![f64::INFINITY; full + 1]; max_tours + 1];
        let mut choice = vec![vec![0usize; full + 1]; max_tours + 1];
        part[0][0] = 0.0;
        for m in 1..=max_tours {
            for mask in 1..=full {
                let low = mask & mask.wrapping_neg();
                let rest = mask & !low;
                let mut sub = rest;
                let mut b = f64::INFINITY;
                let mut arg = 0;
                loop {
                    let s = sub | low;
                    if s.count_ones() as usize <= cap {
                        let v = tour_cost[s].0 + part[m - 1][mask & !s];
                        if v < b {
                            b = v;
                            arg = s;
                        }
                    }
                    if sub == 0 {
                        break;
                    }
                    sub = (sub - 1) & rest;
                }
                part[m][mask] = b;
                choice[m][mask] = arg;
            }
        }
        let m = match num_vehicles {
            Some(m) => m,
            None => (1..=max_tours)
                .fold((f64::INFINITY, 1), |acc, m| if part[m][full] < acc.0 { (part[m][full], m) } else { acc })
                .1,
        };
        let mut tours = Vec::with_capacity(m);
        let mut mask = full;
        for r in (1..=m).rev() {
            let s = choice[r][mask];
            if s == 0 {
                return Err(Error::Infeasible("no routing plan of finite cost exists".into()));
            }
            let last = tour_cost[s].1;
            if last == usize::MAX {
                return Err(Error::Infeasible("no routing plan of finite cost exists".into()));
            }
            tours.push(Tour::from_customers(&paths.customers(s, last)));
            mask &= !s;
        }
        infeasible_if_infinite(TourPlan::assemble(tours, c, true))
    }
}

/// Exact single-tour (asymmetric TSP) solver for up to [`HELD_KARP_MAX`]
/// targets.
pub struct HeldKarp;

impl RoutingSolver for HeldKarp {
    fn name(&self) -> &'static str {
        "held-karp"
    }

    fn solve(&self, c: &CostMatrix, q: Option<usize>, num_vehicles: Option<usize>) -> Result<TourPlan> {
        check_instance(c, q, num_vehicles)?;
        let k = c.n() - 1;
        if num_vehicles.is_some_and(|m| m != 1) || q.is_some_and(|q| q < k) {
            return Err(Error::validation("routing", "held-karp builds a single tour over all customers"));
        }
        if c.n() > HELD_KARP_MAX {
            return Err(Error::validation(
                "routing",
                format!("held-karp handles at most {HELD_KARP_MAX} targets, got {}", c.n()),
            ));
        }
        let paths = SubsetPaths::new(c, k);
        let full = (1usize << k) - 1;
        let (_, last) = paths.closed(c, full);
        if last == usize::MAX {
            return Err(Error::Infeasible("no tour of finite cost exists".into()));
        }
        let tour = Tour::from_customers(&paths.customers(full, last));
        infeasible_if_infinite(TourPlan::assemble(vec![tour], c, true))
    }
}

/// Savings construction followed by 2-opt and relocate moves. The result is
/// feasible but not certified optimal.
pub struct Savings;

impl RoutingSolver for Savings {
    fn name(&self) -> &'static str {
        "savings"
    }

    fn solve(&self, c: &CostMatrix, q: Option<usize>, num_vehicles: Option<usize>) -> Result<TourPlan> {
        check_instance(c, q, num_vehicles)?;
        let n = c.n();
        let cap = q.unwrap_or(usize::MAX);
        let mut routes: Vec<Vec<usize>> = (1..n).map(|i| vec![i]).collect();

        let mut savings = Vec::new();
        for i in 1..n {
            for j in 1..n {
                if i != j {
                    let s = c.get(i, 0) + c.get(0, j) - c.get(i, j);
                    if !s.is_nan() {
                        savings.push((s, i, j));
                    }
                }
            }
        }
        savings.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let min_routes = num_vehicles.unwrap_or(1);
        for &(s, i, j) in &savings {
            if routes.len() <= min_routes || !(s > 0.0) {
                break;
            }
            let Some(a) = routes.iter().position(|r| r.last() == Some(&i)) else { continue };
            let Some(b) = routes.iter().position(|r| r.first() == Some(&j)) else { continue };
            if a == b || routes[a].len() + routes[b].len() > cap {
                continue;
            }
            let tail = routes[b].clone();
            routes[a].extend(tail);
            routes.remove(b);
        }

        if let Some(m) = num_vehicles {
            // merge the cheapest compatible pair until m routes remain
            while routes.len() > m {
                let mut best: Option<(f64, usize, usize)> = None;
                for a in 0..routes.len() {
                    for b in 0..routes.len() {
                        if a == b || routes[a].len() + routes[b].len() > cap {
                            continue;
                        }
                        let mut merged = routes[a].clone();
                        merged.extend(&routes[b]);
                        let delta = c.route_cost(&merged) - c.route_cost(&routes[a]) - c.route_cost(&routes[b]);
                        if best.is_none_or(|x| delta < x.0) {
                            best = Some((delta, a, b));
                        }
                    }
                }
                let Some((_, a, b)) = best else {
                    return Err(Error::Infeasible(format!("cannot merge down to {m} tours")));
                };
                let tail = routes[b].clone();
                routes[a].extend(tail);
                routes.remove(b);
            }
            // split the longest route until m routes exist
            while routes.len() < m {
                let a = (0..routes.len()).max_by_key(|&a| (routes[a].len(), usize::MAX - a)).unwrap();
                let last = routes[a].pop().expect("nonempty route");
                routes.push(vec![last]);
            }
        }

        improve(c, &mut routes, cap, num_vehicles.is_some());
        let tours = routes.iter().map(|r| Tour::from_customers(r)).collect();
        infeasible_if_infinite(TourPlan::assemble(tours, c, false))
    }
}

fn improve(c: &CostMatrix, routes: &mut Vec<Vec<usize>>, cap: usize, keep_count: bool) {
    let eps = 1e-12;
    loop {
        let mut changed = false;
        for r in routes.iter_mut() {
            changed |= two_opt(c, r, eps);
        }
        changed |= relocate(c, routes, cap, keep_count, eps);
        if !changed {
            break;
        }
    }
}

fn two_opt(c: &CostMatrix, route: &mut [usize], eps: f64) -> bool {
    let mut changed = false;
    let mut current = c.route_cost(route);
    loop {
        let mut improved = false;
        for i in 0..route.len() {
            for j in i + 1..route.len() {
                route[i..=j].reverse();
                let v = c.route_cost(route);
                if v < current - eps {
                    current = v;
                    improved = true;
                } else {
                    route[i..=j].reverse();
                }
            }
        }
        if !improved {
            return changed;
        }
        changed = true;
    }
}

fn relocate(c: &CostMatrix, routes: &mut Vec<Vec<usize>>, cap: usize, keep_count: bool, eps: f64) -> bool {
    for a in 0..routes.len() {
        for pos in 0..routes[a].len() {
            if keep_count && routes[a].len() == 1 {
                continue;
            }
            let node = routes[a][pos];
            let mut from = routes[a].clone();
            from.remove(pos);
            let gain = c.route_cost(&routes[a]) - c.route_cost(&from);
            for b in 0..routes.len() {
                if b == a || routes[b].len() >= cap {
                    continue;
                }
                for ins in 0..=routes[b].len() {
                    let mut to = routes[b].clone();
                    to.insert(ins, node);
                    let loss = c.route_cost(&to) - c.route_cost(&routes[b]);
                    if loss < gain - eps {
                        routes[a] = from;
                        routes[b] = to;
                        routes.retain(|r| !r.is_empty());
                        return true;
                    }
                }
            }
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform(n: usize) -> CostMatrix {
        CostMatrix::from_fn(n, |_, _| 1.0).unwrap()
    }

    #[test]
    fn toy_cvrp_costs_five() {
        let c = uniform(4);
        let plan = solve_cvrp(&c, Some(2), None).unwrap();
        assert_eq!(plan.total_cost, 5.0);
        let mut sizes: Vec<usize> = plan.tours.iter().map(|t| t.customers().len()).collect();
        sizes.sort();
        assert_eq!(sizes, vec![1, 2]);
        assert!(plan.certified);
        plan.validate(&c, Some(2), None).unwrap();
    }

    #[test]
    fn asymmetric_triangle() {
        let rows = [[0.0, 1.0, 2.0], [5.0, 0.0, 1.0], [1.0, 9.0, 0.0]];
        let c = CostMatrix::from_fn(3, |i, j| rows[i][j]).unwrap();
        for name in ["auto", "exact", "held-karp", "savings"] {
            let plan = solver_registry().get(name).unwrap().solve(&c, None, Some(1)).unwrap();
            assert_eq!(plan.tours, vec![Tour { stops: vec![0, 1, 2, 0] }], "{name}");
            assert_eq!(plan.total_cost, 3.0);
        }
    }

    #[test]
    fn capacity_one_forces_singletons() {
        let c = uniform(3);
        let plan = solve_cvrp(&c, Some(1), None).unwrap();
        assert_eq!(plan.tours, vec![Tour { stops: vec![0, 1, 0] }, Tour { stops: vec![0, 2, 0] }]);
    }

    #[test]
    fn infeasible_vehicle_counts() {
        let c = uniform(5);
        assert!(matches!(solve_cvrp(&c, Some(2), Some(1)), Err(Error::Infeasible(_))));
        assert!(matches!(solve_cvrp(&c, None, Some(5)), Err(Error::Infeasible(_))));
    }

    #[test]
    fn fixed_vehicle_count_is_respected() {
        let c = CostMatrix::from_fn(6, |i, j| (i as f64 - j as f64).abs()).unwrap();
        for m in 1..=5 {
            let plan = solve_cvrp(&c, None, Some(m)).unwrap();
            plan.validate(&c, None, Some(m)).unwrap();
            let h = Savings.solve(&c, None, Some(m)).unwrap();
            h.validate(&c, None, Some(m)).unwrap();
            assert!(h.total_cost >= plan.total_cost);
        }
    }

    #[test]
    fn state_row_replaces_depot_row() {
        use crate::abstraction::AbstractSystem;
        use crate::coverage::{solve_coverage, CoverageMode};
        // line 0 - 1 - 2 - 3 with moves both ways
        let mut lists = Vec::new();
        for c in 0..4u32 {
            lists.push(vec![(c + 1).min(3)]);
            lists.push(vec![c.saturating_sub(1)]);
        }
        let sys = AbstractSystem::explicit(4, 2, lists, vec![1.0; 8]).unwrap();
        let cov = solve_coverage(&sys, &[vec![0], vec![3]], CoverageMode::Fifo).unwrap();
        let c = cost_matrix_from_coverage(&cov);
        assert_eq!(c.get(0, 1), 3.0);
        assert_eq!(c.get(1, 0), 3.0);
        assert!(c.get(0, 0).is_infinite());
        let s = cost_matrix_from_state(&cov, 2).unwrap();
        assert_eq!(s.get(0, 1), 1.0);
        assert_eq!(s.get(1, 0), 3.0);
    }
}
