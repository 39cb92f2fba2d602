//! Vehicle models, sampled-data integration and growth bounds.
//!
//! A model supplies the vector field `f(x, u)` of `x' = f(x, u) + w` and a
//! componentwise bound `L` on its Jacobian. [`SampledDynamics`] integrates the
//! model over one sampling period with classical Runge–Kutta and bounds how
//! far neighbouring trajectories can drift apart, which is what the
//! abstraction needs.

use std::fmt;
use std::sync::{Arc, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bounds::{wrap, Bounds, TAU};
use crate::error::{Error, Result};
use crate::registry::Registry;

/// Square matrix stored row-major as nested vectors.
pub type Matrix = Vec<Vec<f64>>;

pub trait VehicleModel: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;

    /// State dimension, or `None` if the model adapts to the input dimension.
    fn state_dim(&self) -> Option<usize>;

    fn input_dim(&self) -> Option<usize>;

    /// Dimensions holding angles in radians, wrapped into `[0, 2π)`.
    fn angle_dims(&self) -> &'static [usize] {
        &[]
    }

    fn vector_field(&self, x: &[f64], u: &[f64], dx: &mut [f64]);

    /// Componentwise bound on `|∂f_i/∂x_j|` for input `u`, valid on `region`.
    /// Off-diagonal entries must be nonnegative.
    fn jacobian_bound(&self, u: &[f64], region: &Bounds) -> Matrix;
}

/// Dubins aircraft: position `(x1, x2)`, course angle `x3`; inputs are speed
/// and course rate.
#[derive(Debug, Clone, Copy, Default)]
pub struct Dubins;

impl VehicleModel for Dubins {
    fn name(&self) -> &'static str {
        "dubins"
    }
    fn state_dim(&self) -> Option<usize> {
        Some(3)
    }
    fn input_dim(&self) -> Option<usize> {
        Some(2)
    }
    fn angle_dims(&self) -> &'static [usize] {
        &[2]
    }
    fn vector_field(&self, x: &[f64], u: &[f64], dx: &mut [f64]) {
        dx[0] = u[0] * x[2].cos();
        dx[1] = u[0] * x[2].sin();
        dx[2] = u[1];
    }
    fn jacobian_bound(&self, u: &[f64], _region: &Bounds) -> Matrix {
        let s = u[0].abs();
        vec![vec![0.0, 0.0, s], vec![0.0, 0.0, s], vec![0.0, 0.0, 0.0]]
    }
}

/// Kinematic bicycle truck: position, heading `x3`, speed `x4`; inputs are
/// acceleration and steering angle.
#[derive(Debug, Clone, Copy, Default)]
pub struct Bicycle;

impl Bicycle {
    fn slip(u2: f64) -> (f64, f64) {
        let alpha = (u2.tan() / 2.0).atan();
        (alpha, 1.0 / alpha.cos())
    }
}

impl VehicleModel for Bicycle {
    fn name(&self) -> &'static str {
        "bicycle"
    }
    fn state_dim(&self) -> Option<usize> {
        Some(4)
    }
    fn input_dim(&self) -> Option<usize> {
        Some(2)
    }
    fn angle_dims(&self) -> &'static [usize] {
        &[2]
    }
    fn vector_field(&self, x: &[f64], u: &[f64], dx: &mut [f64]) {
        let (alpha, beta) = Self::slip(u[1]);
        dx[0] = x[3] * (alpha + x[2]).cos() * beta;
        dx[1] = x[3] * (alpha + x[2]).sin() * beta;
        dx[2] = x[3] * u[1].tan();
        dx[3] = u[0];
    }
    fn jacobian_bound(&self, u: &[f64], region: &Bounds) -> Matrix {
        let (_, beta) = Self::slip(u[1]);
        let vmax = region.lower[3].abs().max(region.upper[3].abs());
        let t = u[1].tan().abs();
        vec![
            vec![0.0, 0.0, vmax * beta, beta],
            vec![0.0, 0.0, vmax * beta, beta],
            vec![0.0, 0.0, 0.0, t],
            vec![0.0, 0.0, 0.0, 0.0],
        ]
    }
}

/// `x' = u`, in as many dimensions as there are inputs. Used for tests and toy
/// scenarios.
#[derive(Debug, Clone, Copy, Default)]
pub struct Integrator;

impl VehicleModel for Integrator {
    fn name(&self) -> &'static str {
        "integrator"
    }
    fn state_dim(&self) -> Option<usize> {
        None
    }
    fn input_dim(&self) -> Option<usize> {
        None
    }
    fn vector_field(&self, _x: &[f64], u: &[f64], dx: &mut [f64]) {
        dx.copy_from_slice(u);
    }
    fn jacobian_bound(&self, u: &[f64], _region: &Bounds) -> Matrix {
        vec![vec![0.0; u.len()]; u.len()]
    }
}

/// Registry of the built-in vehicle models, keyed by scenario name.
pub fn model_registry() -> &'static Registry<dyn VehicleModel> {
    static REGISTRY: OnceLock<Registry<dyn VehicleModel>> = OnceLock::new();
    REGISTRY.get_or_init(|| {
        let mut reg: Registry<dyn VehicleModel> = Registry::new("vehicle model");
        reg.register("dubins", || Arc::new(Dubins));
        reg.register("bicycle", || Arc::new(Bicycle));
        reg.register("integrator", || Arc::new(Integrator));
        reg
    })
}

/// A vehicle model sampled with period `tau` under disturbances from the box `W`.
#[derive(Debug, Clone)]
pub struct SampledDynamics {
    model: Arc<dyn VehicleModel>,
    state_dim: usize,
    tau: f64,
    substeps: usize,
    input_bounds: Bounds,
    disturbance: Bounds,
    jacobian_override: Option<Matrix>,
}

pub const MIN_SUBSTEPS: usize = 10;

impl SampledDynamics {
    pub fn new(
        model: Arc<dyn VehicleModel>,
        state_dim: usize,
        tau: f64,
        input_bounds: Bounds,
        disturbance: Bounds,
    ) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::validation("dynamics.tau", "sampling period must be positive"));
        }
        if let Some(n) = model.state_dim() {
            if n != state_dim {
                return Err(Error::validation(
                    "dynamics.model",
                    format!("{} has {n} states, grid has {state_dim}", model.name()),
                ));
            }
        }
        let m = model.input_dim().unwrap_or(state_dim);
        if input_bounds.dim() != m {
            return Err(Error::validation(
                "dynamics.input",
                format!("{} expects {m} inputs, got {}", model.name(), input_bounds.dim()),
            ));
        }
        if disturbance.dim() != state_dim {
            return Err(Error::validation(
                "dynamics.disturbance",
                format!("expected {state_dim} dimensions"),
            ));
        }
        if disturbance.lower.iter().zip(&disturbance.upper).any(|(l, u)| !(*l <= 0.0 && 0.0 <= *u))
        {
            return Err(Error::validation("dynamics.disturbance", "W must contain the origin"));
        }
        Ok(Self {
            model,
            state_dim,
            tau,
            substeps: MIN_SUBSTEPS,
            input_bounds,
            disturbance,
            jacobian_override: None,
        })
    }

    pub fn with_substeps(mut self, substeps: usize) -> Result<Self> {
        if substeps < MIN_SUBSTEPS {
            return Err(Error::validation(
                "dynamics.substeps",
                format!("at least {MIN_SUBSTEPS} Runge-Kutta substeps are required"),
            ));
        }
        self.substeps = substeps;
        Ok(self)
    }

    /// Replaces the model's input-dependent Jacobian bound with a fixed matrix.
    pub fn with_jacobian_bound(mut self, l: Matrix) -> Result<Self> {
        let n = self.state_dim;
        if l.len() != n || l.iter().any(|row| row.len() != n) {
            return Err(Error::validation("dynamics.jacobian_bound", format!("need a {n}x{n} matrix")));
        }
        for (i, row) in l.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                if !v.is_finite() || (i != j && *v < 0.0) {
                    return Err(Error::validation(
                        "dynamics.jacobian_bound",
                        format!("entry ({i},{j}) = {v}: off-diagonal entries must be >= 0"),
                    ));
                }
            }
        }
        self.jacobian_override = Some(l);
        Ok(self)
    }

    pub fn model(&self) -> &Arc<dyn VehicleModel> {
        &self.model
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn substeps(&self) -> usize {
        self.substeps
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn input_bounds(&self) -> &Bounds {
        &self.input_bounds
    }

    pub fn disturbance(&self) -> &Bounds {
        &self.disturbance
    }

    /// Componentwise disturbance half-widths `w̄`.
    pub fn disturbance_radius(&self) -> Vec<f64> {
        self.disturbance
            .lower
            .iter()
            .zip(&self.disturbance.upper)
            .map(|(l, u)| l.abs().max(u.abs()))
            .collect()
    }

    pub fn jacobian_bound(&self, u: &[f64], region: &Bounds) -> Matrix {
        match &self.jacobian_override {
            Some(l) => l.clone(),
            None => self.model.jacobian_bound(u, region),
        }
    }

    pub fn vector_field(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let mut dx = vec![0.0; x.len()];
        self.model.vector_field(x, u, &mut dx);
        dx
    }

    /// State after one sampling period under constant disturbance `w`, with
    /// angle dimensions wrapped into `[0, 2π)`.
    pub fn step(&self, x: &[f64], u: &[f64], w: &[f64]) -> Result<Vec<f64>> {
        let mut y = self.step_unwrapped(x, u, w)?;
        for &d in self.model.angle_dims() {
            y[d] = wrap(y[d], TAU);
        }
        Ok(y)
    }

    /// Like [`step`](Self::step) but leaves angles unwrapped.
    pub fn step_unwrapped(&self, x: &[f64], u: &[f64], w: &[f64]) -> Result<Vec<f64>> {
        let y = rk4(self.model.as_ref(), x, u, w, self.tau, self.substeps);
        if y.iter().all(|v| v.is_finite()) {
            Ok(y)
        } else {
            Err(Error::Numerical(format!("non-finite state after step from {x:?} with input {u:?}")))
        }
    }

    /// Bound on the deviation after one period between any trajectory starting
    /// within `r0` of a reference and that reference, under input `u`.
    pub fn growth_radius(&self, r0: &[f64], u: &[f64], region: &Bounds) -> Vec<f64> {
        let l = self.jacobian_bound(u, region);
        growth_bound(&l, &self.disturbance_radius(), r0, self.tau)
    }
}

/// Classical fourth-order Runge–Kutta over `[0, tau]` with `substeps` steps.
pub fn rk4(
    model: &dyn VehicleModel,
    x: &[f64],
    u: &[f64],
    w: &[f64],
    tau: f64,
    substeps: usize,
) -> Vec<f64> {
    let n = x.len();
    let h = tau / substeps as f64;
    let mut y = x.to_vec();
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut tmp = vec![0.0; n];
    let field = |y: &[f64], out: &mut [f64]| {
        model.vector_field(y, u, out);
        for (o, wi) in out.iter_mut().zip(w) {
            *o += wi;
        }
    };
    for _ in 0..substeps {
        field(&y, &mut k1);
        for i in 0..n {
            tmp[i] = y[i] + 0.5 * h * k1[i];
        }
        field(&tmp, &mut k2);
        for i in 0..n {
            tmp[i] = y[i] + 0.5 * h * k2[i];
        }
        field(&tmp, &mut k3);
        for i in 0..n {
            tmp[i] = y[i] + h * k3[i];
        }
        field(&tmp, &mut k4);
        for i in 0..n {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    y
}

/// `r(τ) = e^{Lτ} r0 + ∫₀^τ e^{Ls} w̄ ds`, the solution of `r' = L r + w̄`.
///
/// Computed as one exponential of the augmented matrix `[[L, w̄], [0, 0]]`.
pub fn growth_bound(l: &[Vec<f64>], wbar: &[f64], r0: &[f64], tau: f64) -> Vec<f64> {
    let n = r0.len();
    let mut aug = vec![vec![0.0; n + 1]; n + 1];
    for i in 0..n {
        for j in 0..n {
            aug[i][j] = l[i][j] * tau;
        }
        aug[i][n] = wbar[i] * tau;
    }
    let e = expm(&aug);
    (0..n)
        .map(|i| {
            let v: f64 = (0..n).map(|j| e[i][j] * r0[j]).sum::<f64>() + e[i][n];
            v.max(0.0)
        })
        .collect()
}

fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Matrix {
    let n = a.len();
    let mut c = vec![vec![0.0; n]; n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i][k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..n {
                c[i][j] += aik * b[k][j];
            }
        }
    }
    c
}

fn norm_inf(a: &[Vec<f64>]) -> f64 {
    a.iter().map(|row| row.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// Matrix exponential by scaling and squaring with a Taylor series summed
/// until the terms fall below machine precision.
pub fn expm(a: &[Vec<f64>]) -> Matrix {
    let n = a.len();
    let norm = norm_inf(a);
    let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as u32 } else { 0 };
    let scale = 0.5f64.powi(squarings as i32);
    let scaled: Matrix = a.iter().map(|row| row.iter().map(|v| v * scale).collect()).collect();

    let mut result: Matrix = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    let mut term = result.clone();
    for k in 1..64 {
        term = matmul(&term, &scaled);
        let inv = 1.0 / k as f64;
        term.iter_mut().flatten().for_each(|v| *v *= inv);
        for i in 0..n {
            for j in 0..n {
                result[i][j] += term[i][j];
            }
        }
        if norm_inf(&term) <= f64::EPSILON * norm_inf(&result) {
            break;
        }
    }
    for _ in 0..squarings {
        result = matmul(&result, &result);
    }
    result
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DisturbanceMode {
    None,
    UniformRandom,
    CornerAdversarial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisturbancePolicy {
    pub mode: DisturbanceMode,
    pub seed: u64,
}

impl DisturbancePolicy {
    pub fn none() -> Self {
        Self { mode: DisturbanceMode::None, seed: 0 }
    }

    pub fn source(&self) -> DisturbanceSource {
        self.stream(0)
    }

    /// Independent generator number `k` for the same seed (one per vehicle).
    pub fn stream(&self, k: u64) -> DisturbanceSource {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(k);
        DisturbanceSource { mode: self.mode, rng }
    }
}

/// Piecewise-constant disturbance generator: one draw per sampling interval.
#[derive(Debug, Clone)]
pub struct DisturbanceSource {
    mode: DisturbanceMode,
    rng: ChaCha8Rng,
}

impl DisturbanceSource {
    pub fn sample(&mut self, w: &Bounds) -> Vec<f64> {
        match self.mode {
            DisturbanceMode::None => vec![0.0; w.dim()],
            DisturbanceMode::UniformRandom => (0..w.dim())
                .map(|d| {
                    if w.lower[d] == w.upper[d] {
                        w.lower[d]
                    } else {
                        self.rng.random_range(w.lower[d]..=w.upper[d])
                    }
                })
                .collect(),
            DisturbanceMode::CornerAdversarial => (0..w.dim())
                .map(|d| if self.rng.random_bool(0.5) { w.upper[d] } else { w.lower[d] })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use std::f64::consts::{FRAC_PI_2, LN_2};

    use super::*;

    fn dubins() -> SampledDynamics {
        SampledDynamics::new(
            Arc::new(Dubins),
            3,
            0.65,
            Bounds::new(vec![20.0, -0.5], vec![50.0, 0.5]).unwrap(),
            Bounds::new(vec![-5.0, -2.0, -0.04], vec![5.0, 2.0, 0.04]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn vector_fields() {
        let mut dx = [0.0; 3];
        Dubins.vector_field(&[0.0, 0.0, 0.0], &[20.0, 0.0], &mut dx);
        assert_eq!(dx, [20.0, 0.0, 0.0]);

        Dubins.vector_field(&[1.0, 2.0, FRAC_PI_2], &[30.0, 0.5], &mut dx);
        assert!(dx[0].abs() < 1e-12);
        assert!((dx[1] - 30.0).abs() < 1e-12);
        assert_eq!(dx[2], 0.5);

        let mut dx = [0.0; 4];
        Bicycle.vector_field(&[0.0, 0.0, 0.0, 5.0], &[1.0, 0.0], &mut dx);
        assert_eq!(dx, [5.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn step_examples() {
        let integ = SampledDynamics::new(
            Arc::new(Integrator),
            1,
            0.1,
            Bounds::new(vec![-1.0], vec![1.0]).unwrap(),
            Bounds::closed(vec![0.0], vec![0.0]).unwrap(),
        )
        .unwrap();
        let y = integ.step(&[0.0], &[1.0], &[0.0]).unwrap();
        assert!((y[0] - 0.1).abs() < 1e-15);

        let d = dubins();
        let y = d.step(&[0.0, 0.0, 0.0], &[20.0, 0.0], &[0.0; 3]).unwrap();
        assert!((y[0] - 13.0).abs() < 1e-12 && y[1].abs() < 1e-12 && y[2].abs() < 1e-12);
        let y = d.step(&[0.0, 0.0, 0.0], &[20.0, 0.0], &[5.0, 0.0, 0.0]).unwrap();
        assert!((y[0] - 16.25).abs() < 1e-12);
    }

    #[test]
    fn step_wraps_angle() {
        let d = dubins();
        let a = d.step(&[10.0, 10.0, 0.3], &[35.0, 0.5], &[1.0, -1.0, 0.02]).unwrap();
        let b = d.step(&[10.0, 10.0, 0.3 + TAU], &[35.0, 0.5], &[1.0, -1.0, 0.02]).unwrap();
        assert!((a[0] - b[0]).abs() < 1e-9);
        assert!((a[1] - b[1]).abs() < 1e-9);
        let da = (a[2] - b[2]).rem_euclid(TAU);
        assert!(da < 1e-9 || TAU - da < 1e-9);
        assert!((0.0..TAU).contains(&a[2]));
    }

    #[test]
    fn growth_examples() {
        // L = 0, W = {0}
        let r = growth_bound(&[vec![0.0]], &[0.0], &[0.7], 0.3);
        assert!((r[0] - 0.7).abs() < 1e-15);
        // scalar L = 1, tau = ln 2 doubles the radius
        let r = growth_bound(&[vec![1.0]], &[0.0], &[1.0], LN_2);
        assert!((r[0] - 2.0).abs() < 1e-14, "{r:?}");
        // pure disturbance integration
        let r = growth_bound(&[vec![0.0]], &[1.0], &[0.25], 0.5);
        assert!((r[0] - 0.75).abs() < 1e-15);
        // large norm exercises the squaring phase: e^{10} with r0 = 1
        let r = growth_bound(&[vec![5.0]], &[0.0], &[1.0], 2.0);
        assert!((r[0] / 10f64.exp() - 1.0).abs() < 1e-13);
    }

    #[test]
    fn growth_with_disturbance_closed_form() {
        // r' = a r + w: r(t) = e^{at} r0 + w (e^{at} - 1) / a
        let (a, w, r0, t) = (0.8, 0.3, 0.2, 1.7);
        let r = growth_bound(&[vec![a]], &[w], &[r0], t);
        let expect = (a * t).exp() * r0 + w * ((a * t).exp() - 1.0) / a;
        assert!((r[0] - expect).abs() < 1e-13);
    }

    #[test]
    fn rejects_bad_configuration() {
        let w = Bounds::new(vec![0.1, -1.0, -1.0], vec![1.0, 1.0, 1.0]).unwrap();
        let u = Bounds::new(vec![20.0, -0.5], vec![50.0, 0.5]).unwrap();
        assert!(SampledDynamics::new(Arc::new(Dubins), 3, 0.65, u.clone(), w).is_err());
        let w0 = Bounds::closed(vec![0.0; 3], vec![0.0; 3]).unwrap();
        assert!(SampledDynamics::new(Arc::new(Dubins), 3, 0.0, u.clone(), w0.clone()).is_err());
        assert!(SampledDynamics::new(Arc::new(Dubins), 4, 0.65, u.clone(), w0.clone()).is_err());
        let d = SampledDynamics::new(Arc::new(Dubins), 3, 0.65, u, w0).unwrap();
        assert!(d.clone().with_substeps(5).is_err());
        assert!(d.with_jacobian_bound(vec![vec![0.0, -1.0, 0.0]; 3]).is_err());
    }

    #[test]
    fn registry_knows_models() {
        let reg = model_registry();
        assert_eq!(reg.names(), vec!["bicycle", "dubins", "integrator"]);
        assert_eq!(reg.get("dubins").unwrap().name(), "dubins");
        assert!(reg.get("quadrotor").is_err());
    }

    #[test]
    fn disturbance_sources_stay_in_w() {
        let w = Bounds::new(vec![-5.0, -2.0, -0.04], vec![5.0, 2.0, 0.04]).unwrap();
        for mode in [DisturbanceMode::UniformRandom, DisturbanceMode::CornerAdversarial] {
            let mut src = DisturbancePolicy { mode, seed: 3 }.source();
            for _ in 0..100 {
                let s = src.sample(&w);
                assert!(w.contains(&s));
                if mode == DisturbanceMode::CornerAdversarial {
                    assert!(s.iter().enumerate().all(|(d, v)| *v == w.lower[d] || *v == w.upper[d]));
                }
            }
        }
        let mut a = DisturbancePolicy { mode: DisturbanceMode::UniformRandom, seed: 9 }.source();
        let mut b = DisturbancePolicy { mode: DisturbanceMode::UniformRandom, seed: 9 }.source();
        assert_eq!(a.sample(&w), b.sample(&w));
    }
}
