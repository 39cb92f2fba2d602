//! Uniform cell cover of the state domain and the finite input set.
//!
//! Cells are half-open boxes `[l, l + w)` per dimension; in non-periodic
//! dimensions the last cell is closed above so the cover partitions the closed
//! domain. Periodic dimensions are angles identified modulo the domain width.

use serde::{Deserialize, Serialize};

use crate::bounds::{wrap, Bounds};
use crate::error::{Error, Result};

/// Tolerance, in cell widths, for matching box faces to grid faces.
pub const FACE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    domain: Bounds,
    cells_per_dim: Vec<usize>,
    periodic: Vec<bool>,
    widths: Vec<f64>,
    strides: Vec<usize>,
    num_cells: usize,
}

impl Grid {
    pub fn new(domain: Bounds, cells_per_dim: Vec<usize>, periodic: Vec<bool>) -> Result<Self> {
        domain.validate("grid.domain")?;
        let n = domain.dim();
        if cells_per_dim.len() != n || periodic.len() != n {
            return Err(Error::validation(
                "grid",
                format!("domain has {n} dimensions, cells/periodic lists must match"),
            ));
        }
        if cells_per_dim.contains(&0) {
            return Err(Error::validation("grid.cells", "cell counts must be positive"));
        }
        let num_cells = cells_per_dim
            .iter()
            .try_fold(1usize, |acc, &c| acc.checked_mul(c))
            .filter(|&c| c <= u32::MAX as usize)
            .ok_or_else(|| Error::validation("grid.cells", "too many cells"))?;
        let widths = (0..n).map(|d| domain.width(d) / cells_per_dim[d] as f64).collect();
        // first dimension varies fastest
        let mut strides = vec![1; n];
        for d in 1..n {
            strides[d] = strides[d - 1] * cells_per_dim[d - 1];
        }
        Ok(Self { domain, cells_per_dim, periodic, widths, strides, num_cells })
    }

    pub fn dim(&self) -> usize {
        self.cells_per_dim.len()
    }

    pub fn num_cells(&self) -> usize {
        self.num_cells
    }

    pub fn domain(&self) -> &Bounds {
        &self.domain
    }

    pub fn cells_per_dim(&self) -> &[usize] {
        &self.cells_per_dim
    }

    pub fn periodic(&self) -> &[bool] {
        &self.periodic
    }

    pub fn cell_width(&self, d: usize) -> f64 {
        self.widths[d]
    }

    pub fn cell_widths(&self) -> &[f64] {
        &self.widths
    }

    pub fn period(&self, d: usize) -> f64 {
        self.domain.width(d)
    }

    pub fn index_of(&self, multi: &[usize]) -> usize {
        multi.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    pub fn multi_index(&self, cell: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.dim());
        let mut rest = cell;
        for &c in &self.cells_per_dim {
            out.push(rest % c);
            rest /= c;
        }
        out
    }

    pub fn cell_center(&self, cell: usize) -> Vec<f64> {
        self.multi_index(cell)
            .iter()
            .enumerate()
            .map(|(d, &i)| self.domain.lower[d] + (i as f64 + 0.5) * self.widths[d])
            .collect()
    }

    pub fn cell_bounds(&self, cell: usize) -> Bounds {
        let multi = self.multi_index(cell);
        let lower: Vec<f64> = multi
            .iter()
            .enumerate()
            .map(|(d, &i)| self.domain.lower[d] + i as f64 * self.widths[d])
            .collect();
        let upper = lower.iter().zip(&self.widths).map(|(l, w)| l + w).collect();
        Bounds { lower, upper }
    }

    /// Wraps periodic coordinates of `x` into the domain.
    pub fn normalize(&self, x: &mut [f64]) {
        for d in 0..self.dim() {
            if self.periodic[d] {
                let lo = self.domain.lower[d];
                x[d] = lo + wrap(x[d] - lo, self.period(d));
            }
        }
    }

    fn coordinate_index(&self, d: usize, v: f64) -> Option<usize> {
        let lo = self.domain.lower[d];
        let n = self.cells_per_dim[d];
        if self.periodic[d] {
            let k = (wrap(v - lo, self.period(d)) / self.widths[d]).floor() as usize;
            return Some(k.min(n - 1));
        }
        if !(v >= lo && v <= self.domain.upper[d]) {
            return None;
        }
        let k = ((v - lo) / self.widths[d]).floor() as usize;
        Some(k.min(n - 1))
    }

    /// The unique cell containing `x` (periodic dimensions wrapped first).
    pub fn quantize(&self, x: &[f64]) -> Result<usize> {
        if x.len() != self.dim() {
            return Err(Error::validation("state", format!("expected {} coordinates", self.dim())));
        }
        let mut cell = 0;
        for d in 0..self.dim() {
            match self.coordinate_index(d, x[d]) {
                Some(k) => cell += k * self.strides[d],
                None => return Err(Error::OutOfDomain { state: x.to_vec(), dim: d }),
            }
        }
        Ok(cell)
    }

    /// Index ranges per dimension of the cells meeting `b`, or `None` if `b`
    /// leaves the domain in a non-periodic dimension.
    pub fn index_ranges(&self, b: &Bounds) -> Option<Vec<Vec<usize>>> {
        let mut ranges = Vec::with_capacity(self.dim());
        for d in 0..self.dim() {
            let lo = self.domain.lower[d];
            let n = self.cells_per_dim[d];
            let w = self.widths[d];
            if self.periodic[d] {
                if b.upper[d] - b.lower[d] >= self.period(d) {
                    ranges.push((0..n).collect());
                    continue;
                }
                let first = ((b.lower[d] - lo) / w).floor() as i64;
                let last = ((b.upper[d] - lo) / w).floor() as i64;
                let mut idx: Vec<usize> =
                    (first..=last).map(|k| k.rem_euclid(n as i64) as usize).collect();
                idx.sort_unstable();
                idx.dedup();
                ranges.push(idx);
            } else {
                if b.lower[d] < lo || b.upper[d] > self.domain.upper[d] {
                    return None;
                }
                let first = (((b.lower[d] - lo) / w).floor() as usize).min(n - 1);
                let last = (((b.upper[d] - lo) / w).floor() as usize).min(n - 1);
                ranges.push((first..=last).collect());
            }
        }
        Some(ranges)
    }

    /// Index ranges of the cells an attainable-set box `b` can reach, or `None`
    /// if it escapes the domain in a non-periodic dimension.
    ///
    /// The image of a half-open cell is treated as half-open too: a box whose
    /// upper face lies on a grid face does not reach the next cell. Faces are
    /// matched up to `FACE_TOL` cell widths.
    pub fn successor_ranges(&self, b: &Bounds) -> Option<Vec<Vec<usize>>> {
        let mut ranges = Vec::with_capacity(self.dim());
        for d in 0..self.dim() {
            let lo = self.domain.lower[d];
            let n = self.cells_per_dim[d] as i64;
            let w = self.widths[d];
            let mut first = ((b.lower[d] - lo) / w + FACE_TOL).floor() as i64;
            if !self.periodic[d] && first == n {
                // a box touching only the top face sits in the closed last cell
                first = n - 1;
            }
            let last = (((b.upper[d] - lo) / w - FACE_TOL).ceil() as i64 - 1).max(first);
            if self.periodic[d] {
                if last - first + 1 >= n {
                    ranges.push((0..n as usize).collect());
                    continue;
                }
                let mut idx: Vec<usize> = (first..=last).map(|k| k.rem_euclid(n) as usize).collect();
                idx.sort_unstable();
                ranges.push(idx);
            } else {
                if first < 0 || last >= n {
                    return None;
                }
                ranges.push((first as usize..=last as usize).collect());
            }
        }
        Some(ranges)
    }

    /// Cells with nonempty intersection with `b` (clipped to the domain).
    pub fn cells_intersecting(&self, b: &Bounds) -> Vec<usize> {
        let mut clipped = b.clone();
        for d in 0..self.dim() {
            if self.periodic[d] {
                continue;
            }
            clipped.lower[d] = clipped.lower[d].max(self.domain.lower[d]);
            clipped.upper[d] = clipped.upper[d].min(self.domain.upper[d]);
            if clipped.lower[d] > clipped.upper[d] {
                return Vec::new();
            }
        }
        match self.index_ranges(&clipped) {
            Some(r) => self.expand(&r),
            None => Vec::new(),
        }
    }

    /// Cells entirely contained in the closed box `b`.
    pub fn cells_within(&self, b: &Bounds) -> Vec<usize> {
        let eps = 1e-9;
        let mut ranges = Vec::with_capacity(self.dim());
        for d in 0..self.dim() {
            let lo = self.domain.lower[d];
            let n = self.cells_per_dim[d];
            let w = self.widths[d];
            let tol = eps * w;
            if self.periodic[d] && b.upper[d] - b.lower[d] >= self.period(d) - tol {
                ranges.push((0..n).collect());
                continue;
            }
            let first = ((b.lower[d] - lo - tol) / w).ceil() as i64;
            let last = ((b.upper[d] - lo + tol) / w).floor() as i64 - 1;
            let idx: Vec<usize> = if self.periodic[d] {
                let mut v: Vec<usize> =
                    (first..=last).map(|k| k.rem_euclid(n as i64) as usize).collect();
                v.sort_unstable();
                v.dedup();
                v
            } else {
                (first.max(0)..=last.min(n as i64 - 1)).map(|k| k as usize).collect()
            };
            if idx.is_empty() {
                return Vec::new();
            }
            ranges.push(idx);
        }
        self.expand(&ranges)
    }

    /// Cartesian product of per-dimension index lists, sorted by cell id.
    pub fn expand(&self, ranges: &[Vec<usize>]) -> Vec<usize> {
        let mut cells = vec![0usize];
        for (d, r) in ranges.iter().enumerate() {
            let stride = self.strides[d];
            let mut next = Vec::with_capacity(cells.len() * r.len());
            for &k in r {
                next.extend(cells.iter().map(|c| c + k * stride));
            }
            cells = next;
        }
        cells.sort_unstable();
        cells
    }
}

/// The finite input set: a uniform grid of values over the input box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputSet {
    bounds: Bounds,
    values_per_dim: Vec<usize>,
    values: Vec<Vec<f64>>,
}

impl InputSet {
    /// Grid of `values_per_dim[d]` points per dimension, endpoints included
    /// (a single value sits at the midpoint).
    pub fn new(bounds: Bounds, values_per_dim: Vec<usize>) -> Result<Self> {
        bounds.validate("inputs.bounds")?;
        if values_per_dim.len() != bounds.dim() || values_per_dim.contains(&0) {
            return Err(Error::validation(
                "inputs.values",
                "need one positive value count per input dimension",
            ));
        }
        let axes: Vec<Vec<f64>> = values_per_dim
            .iter()
            .enumerate()
            .map(|(d, &k)| {
                let (lo, hi) = (bounds.lower[d], bounds.upper[d]);
                if k == 1 {
                    vec![0.5 * (lo + hi)]
                } else {
                    (0..k).map(|i| lo + (hi - lo) * i as f64 / (k - 1) as f64).collect()
                }
            })
            .collect();
        let mut values: Vec<Vec<f64>> = vec![Vec::new()];
        for axis in axes.iter().rev() {
            values = values
                .into_iter()
                .flat_map(|tail| {
                    axis.iter().map(move |&a| {
                        let mut v = Vec::with_capacity(tail.len() + 1);
                        v.push(a);
                        v.extend_from_slice(&tail);
                        v
                    })
                })
                .collect();
        }
        // re-sort so the first input dimension varies slowest
        values.sort_by(|a, b| a.partial_cmp(b).expect("finite inputs"));
        Ok(Self { bounds, values_per_dim, values })
    }

    /// An input set given by explicit values (used for hand-built test systems).
    pub fn from_values(bounds: Bounds, values: Vec<Vec<f64>>) -> Result<Self> {
        if values.is_empty() || values.iter().any(|v| !bounds.contains(v)) {
            return Err(Error::validation("inputs", "values must be nonempty and inside the bounds"));
        }
        Ok(Self { values_per_dim: vec![values.len()], bounds, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.bounds.dim()
    }

    pub fn value(&self, i: usize) -> &[f64] {
        &self.values[i]
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    pub fn values_per_dim(&self) -> &[usize] {
        &self.values_per_dim
    }
}
