//! Running cost `g(x, y, u)`: time, control effort, optional lane attraction,
//! and `+∞` on forbidden states.
//!
//! The same specification is evaluated two ways: conservatively over a whole
//! transition tube when building the abstraction, and pointwise on concrete
//! samples in the simulator.

use serde::{Deserialize, Serialize};

use crate::bounds::{arc_overlaps, arc_within, Bounds, TAU};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostStyle {
    /// `τ + c·u_k²`
    TimeTurn,
    /// `τ + c·u_k² + min over lane segments of the planar distance of y`
    TimeTurnLane,
}

/// A planar segment of a lane axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub from: [f64; 2],
    pub to: [f64; 2],
}

impl Segment {
    pub fn distance(&self, p: [f64; 2]) -> f64 {
        let (ax, ay) = (self.from[0], self.from[1]);
        let (dx, dy) = (self.to[0] - ax, self.to[1] - ay);
        let len2 = dx * dx + dy * dy;
        let t = if len2 > 0.0 {
            (((p[0] - ax) * dx + (p[1] - ay) * dy) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let (qx, qy) = (ax + t * dx, ay + t * dy);
        ((p[0] - qx).powi(2) + (p[1] - qy).powi(2)).sqrt()
    }
}

/// Inside `zone` the state must also lie in `allowed` (e.g. heading and speed
/// limits on a one-way road).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedZone {
    pub zone: Bounds,
    pub allowed: Bounds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningCostSpec {
    pub style: CostStyle,
    pub tau: f64,
    pub turn_weight: f64,
    pub turn_input: usize,
    pub domain: Bounds,
    pub periodic: Vec<bool>,
    pub obstacles: Vec<Bounds>,
    pub nofly: Vec<Bounds>,
    pub lanes: Vec<Segment>,
    pub speed_zones: Vec<SpeedZone>,
}

impl RunningCostSpec {
    /// Time-plus-turn cost with no forbidden regions besides leaving `domain`.
    pub fn time_turn(tau: f64, turn_weight: f64, turn_input: usize, domain: Bounds, periodic: Vec<bool>) -> Self {
        Self {
            style: CostStyle::TimeTurn,
            tau,
            turn_weight,
            turn_input,
            domain,
            periodic,
            obstacles: Vec::new(),
            nofly: Vec::new(),
            lanes: Vec::new(),
            speed_zones: Vec::new(),
        }
    }

    fn is_periodic(&self, d: usize) -> bool {
        self.periodic.get(d).copied().unwrap_or(false)
    }

    fn overlaps(&self, a: &Bounds, b: &Bounds) -> bool {
        (0..a.dim()).all(|d| {
            if self.is_periodic(d) {
                arc_overlaps(a.lower[d], a.upper[d], b.lower[d], b.upper[d], TAU)
            } else {
                a.lower[d] <= b.upper[d] && b.lower[d] <= a.upper[d]
            }
        })
    }

    /// Whether `g = ∞` somewhere on the tube (source cell hull successor box).
    pub fn tube_blocked(&self, tube: &Bounds) -> bool {
        for d in 0..tube.dim() {
            let tol = 1e-9 * self.domain.width(d);
            if !self.is_periodic(d)
                && (tube.lower[d] < self.domain.lower[d] - tol || tube.upper[d] > self.domain.upper[d] + tol)
            {
                return true;
            }
        }
        if self.obstacles.iter().chain(&self.nofly).any(|o| self.overlaps(tube, o)) {
            return true;
        }
        self.speed_zones.iter().any(|z| {
            if !self.overlaps(tube, &z.zone) {
                return false;
            }
            // the part of the tube inside the zone must satisfy the limits
            !(0..tube.dim()).all(|d| {
                if self.is_periodic(d) {
                    arc_within(tube.lower[d], tube.upper[d], z.allowed.lower[d], z.allowed.upper[d], TAU)
                } else {
                    let lo = tube.lower[d].max(z.zone.lower[d]);
                    let hi = tube.upper[d].min(z.zone.upper[d]);
                    z.allowed.lower[d] <= lo && hi <= z.allowed.upper[d]
                }
            })
        })
    }

    /// Whether `g(x, ·, ·) = ∞` for the concrete state `x`.
    pub fn state_blocked(&self, x: &[f64]) -> bool {
        let p = Bounds::point(x);
        self.tube_blocked(&p)
    }

    fn effort(&self, u: &[f64]) -> f64 {
        let uk = u.get(self.turn_input).copied().unwrap_or(0.0);
        self.tau + self.turn_weight * uk * uk
    }

    pub fn lane_distance(&self, p: [f64; 2]) -> f64 {
        self.lanes.iter().map(|s| s.distance(p)).fold(f64::INFINITY, f64::min)
    }

    /// Finite part of the abstract edge cost: effort for `u` plus, with lanes,
    /// an upper bound of the lane distance over the successor box around
    /// `succ_center` with half-widths `succ_radius`.
    pub fn edge_cost(&self, u: &[f64], succ_center: &[f64], succ_radius: &[f64]) -> f64 {
        let mut c = self.effort(u);
        if self.style == CostStyle::TimeTurnLane && !self.lanes.is_empty() {
            // distance to a set is 1-Lipschitz
            let slack = succ_radius[0].hypot(succ_radius[1]);
            c += self.lane_distance([succ_center[0], succ_center[1]]) + slack;
        }
        c
    }

    /// `g(x, y, u)` on concrete samples.
    pub fn concrete(&self, x: &[f64], y: &[f64], u: &[f64]) -> f64 {
        if self.state_blocked(x) {
            return f64::INFINITY;
        }
        let mut c = self.effort(u);
        if self.style == CostStyle::TimeTurnLane && !self.lanes.is_empty() {
            c += self.lane_distance([y[0], y[1]]);
        }
        c
    }
}
