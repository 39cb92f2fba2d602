//! Axis-aligned boxes and interval tests on the line and on the circle.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TAU: f64 = std::f64::consts::TAU;

/// A closed axis-aligned box `[lower, upper]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    /// Builds a box, requiring `lower[d] < upper[d]` in every dimension.
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let b = Self { lower, upper };
        b.validate("box")?;
        Ok(b)
    }

    /// Builds a box that may be degenerate (`lower[d] <= upper[d]`), e.g. a point.
    pub fn closed(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::validation("box", "lower and upper differ in dimension"));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l <= u)) {
            return Err(Error::validation("box", format!("lower {lower:?} exceeds upper {upper:?}")));
        }
        Ok(Self { lower, upper })
    }

    pub fn point(x: &[f64]) -> Self {
        Self { lower: x.to_vec(), upper: x.to_vec() }
    }

    pub fn validate(&self, field: &str) -> Result<()> {
        if self.lower.len() != self.upper.len() {
            return Err(Error::validation(field, "lower and upper differ in dimension"));
        }
        for (d, (l, u)) in self.lower.iter().zip(&self.upper).enumerate() {
            if !l.is_finite() || !u.is_finite() || !(l < u) {
                return Err(Error::validation(
                    field,
                    format!("dimension {d}: need finite lower < upper, got [{l}, {u}]"),
                ));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn width(&self, d: usize) -> f64 {
        self.upper[d] - self.lower[d]
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| 0.5 * (l + u)).collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .enumerate()
            .all(|(d, &v)| self.lower[d] <= v && v <= self.upper[d])
    }

    /// Component-wise check that `x` lies in the box, with the listed
    /// dimensions compared modulo `TAU`.
    pub fn contains_periodic(&self, x: &[f64], periodic: &[bool]) -> bool {
        x.iter().enumerate().all(|(d, &v)| {
            if periodic.get(d).copied().unwrap_or(false) {
                arc_overlaps(v, v, self.lower[d], self.upper[d], TAU)
            } else {
                self.lower[d] <= v && v <= self.upper[d]
            }
        })
    }

    /// Smallest box containing both `self` and `other`.
    pub fn hull(&self, other: &Bounds) -> Bounds {
        Bounds {
            lower: self.lower.iter().zip(&other.lower).map(|(a, b)| a.min(*b)).collect(),
            upper: self.upper.iter().zip(&other.upper).map(|(a, b)| a.max(*b)).collect(),
        }
    }
}

/// Whether the closed intervals `[a_lo, a_hi]` and `[b_lo, b_hi]` meet on a
/// circle of circumference `period`. Intervals may be given unnormalized.
pub fn arc_overlaps(a_lo: f64, a_hi: f64, b_lo: f64, b_hi: f64, period: f64) -> bool {
    if a_hi - a_lo >= period || b_hi - b_lo >= period {
        return true;
    }
    // shift b so its lower end sits in [a_lo, a_lo + period)
    let shift = ((b_lo - a_lo) / period).floor() * period;
    let (lo, hi) = (b_lo - shift, b_hi - shift);
    (lo <= a_hi) || (hi - period >= a_lo)
}

/// Whether the arc `[a_lo, a_hi]` lies within the arc `[b_lo, b_hi]` on a
/// circle of circumference `period`.
pub fn arc_within(a_lo: f64, a_hi: f64, b_lo: f64, b_hi: f64, period: f64) -> bool {
    if b_hi - b_lo >= period {
        return true;
    }
    if a_hi - a_lo > b_hi - b_lo {
        return false;
    }
    let shift = ((a_lo - b_lo) / period).floor() * period;
    let hi = a_hi - shift;
    hi <= b_hi
}

/// Wraps `v` into `[0, period)`.
pub fn wrap(v: f64, period: f64) -> f64 {
    let r = v.rem_euclid(period);
    if r >= period {
        0.0
    } else {
        r
    }
}
