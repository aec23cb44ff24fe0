//! Quasilinear equations `dx = b(t,x) dt + (a₁(t) x + a₀(t)) dB` with
//! deterministic `a₁, a₀`.
//!
//! Here the shift family is explicit, `h(t,u) = ∫_0^t a₁(s) φ(s,u) ds`, and
//! the `z` equation reduces to a pathwise ODE through the integrating factors
//! `A₁ = exp{−∫a₁ δB}` and `A₂ = ∫A₁ a₀ δB`. For affine drift the solution
//! is also available in closed form, which makes this module the reference
//! against which the general solver is checked.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::char_system::{shift_family, CoeffFn, CoefficientSet, ShiftFamily, LOGISTIC_CAP};
use crate::error::{Error, Result};
use crate::integrators::{riemann_cumulative, trapezoid_cumulative, EvalPoint};
use crate::time_grid::{CellTable, Kernel, SampledPath, TimeGrid};

/// Exponents beyond this are reported as overflow rather than turned into
/// infinities.
pub const MAX_EXPONENT: f64 = 700.0;

/// Maximum number of step halvings inside one grid cell.
pub const MAX_HALVINGS: u32 = 12;

/// Local error target of the step-doubling check, relative to `1 + |y|`.
pub const ODE_TOL: f64 = 1e-9;

/// A coefficient that depends on time only.
#[derive(Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TimeFn {
    Constant {
        value: f64,
    },
    /// `c₀ + c₁ t + c₂ t² + …`
    Polynomial {
        coeffs: Vec<f64>,
    },
    /// Placeholder for coefficients that depend on the sample path. Accepted
    /// by the parser so that configurations can say what they mean, and
    /// rejected by every solver.
    PathDependent,
    #[serde(skip)]
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for TimeFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant { value } => write!(f, "Constant({value})"),
            Self::Polynomial { coeffs } => write!(f, "Polynomial({coeffs:?})"),
            Self::PathDependent => write!(f, "PathDependent"),
            Self::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl Default for TimeFn {
    fn default() -> Self {
        Self::Constant { value: 0.0 }
    }
}

impl TimeFn {
    pub fn constant(value: f64) -> Self {
        Self::Constant { value }
    }

    pub fn custom(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self::Custom(Arc::new(f))
    }

    fn check(&self) -> Result<()> {
        match self {
            Self::PathDependent => Err(Error::domain(
                "path-dependent coefficients are not supported; only deterministic functions of time are",
            )),
            Self::Constant { value } if !value.is_finite() => Err(Error::domain("coefficient must be finite")),
            Self::Polynomial { coeffs } if coeffs.iter().any(|c| !c.is_finite()) => {
                Err(Error::domain("polynomial coefficients must be finite"))
            }
            _ => Ok(()),
        }
    }

    /// Value at `t`. Path-dependent coefficients evaluate to NaN; solvers
    /// reject them before evaluating.
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            Self::Constant { value } => *value,
            Self::Polynomial { coeffs } => coeffs.iter().rev().fold(0.0, |acc, c| acc * t + c),
            Self::PathDependent => f64::NAN,
            Self::Custom(f) => f(t),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Self::Constant { value } => *value == 0.0,
            Self::Polynomial { coeffs } => coeffs.iter().all(|c| *c == 0.0),
            _ => false,
        }
    }

    fn sample(&self, grid: &TimeGrid) -> Vec<f64> {
        (0..grid.len()).map(|i| self.eval(grid.node(i))).collect()
    }

    /// `sup |f|` over `[0, horizon]`, sampled on 1025 points.
    fn sup_abs(&self, horizon: f64) -> f64 {
        (0..=1024).map(|k| self.eval(horizon * k as f64 / 1024.0).abs()).fold(0.0, f64::max)
    }
}

/// Drift of a quasilinear equation.
#[derive(Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DriftSpec {
    /// `b(t,x) = slope(t)·x + intercept(t)`
    Affine {
        #[serde(default)]
        slope: TimeFn,
        #[serde(default)]
        intercept: TimeFn,
    },
    /// `b(t,x) = rate·y(1 − y)` with `y = x` clamped to `±LOGISTIC_CAP`.
    Logistic { rate: f64 },
    #[serde(skip)]
    Custom { b: CoeffFn, b_x: CoeffFn, lipschitz: f64 },
}

impl fmt::Debug for DriftSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Affine { slope, intercept } => {
                f.debug_struct("Affine").field("slope", slope).field("intercept", intercept).finish()
            }
            Self::Logistic { rate } => write!(f, "Logistic({rate})"),
            Self::Custom { lipschitz, .. } => write!(f, "Custom(L = {lipschitz})"),
        }
    }
}

impl DriftSpec {
    pub fn value(&self, t: f64, x: f64) -> f64 {
        match self {
            Self::Affine { slope, intercept } => slope.eval(t) * x + intercept.eval(t),
            Self::Logistic { rate } => {
                let y = x.clamp(-LOGISTIC_CAP, LOGISTIC_CAP);
                rate * y * (1.0 - y)
            }
            Self::Custom { b, .. } => b(t, x),
        }
    }

    pub fn derivative(&self, t: f64, x: f64) -> f64 {
        match self {
            Self::Affine { slope, .. } => slope.eval(t),
            Self::Logistic { rate } => {
                if x.abs() < LOGISTIC_CAP {
                    rate * (1.0 - 2.0 * x)
                } else {
                    0.0
                }
            }
            Self::Custom { b_x, .. } => b_x(t, x),
        }
    }

    fn check(&self) -> Result<()> {
        match self {
            Self::Affine { slope, intercept } => {
                slope.check()?;
                intercept.check()
            }
            Self::Logistic { rate } if !rate.is_finite() => Err(Error::domain("logistic rate must be finite")),
            _ => Ok(()),
        }
    }

    fn lipschitz(&self, horizon: f64) -> f64 {
        match self {
            Self::Affine { slope, .. } => slope.sup_abs(horizon),
            Self::Logistic { rate } => rate.abs() * (2.0 * LOGISTIC_CAP + 1.0),
            Self::Custom { lipschitz, .. } => *lipschitz,
        }
    }
}

/// `σ(t,x) = a₁(t) x + a₀(t)` together with the drift.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuasilinearCoeffs {
    #[serde(default)]
    pub a1: TimeFn,
    #[serde(default)]
    pub a0: TimeFn,
    pub drift: DriftSpec,
}

impl QuasilinearCoeffs {
    /// Linear equation with constant coefficients:
    /// `dx = (β₁x + β₀) dt + (a₁x + a₀) dB`.
    pub fn linear(beta1: f64, beta0: f64, a1: f64, a0: f64) -> Self {
        Self {
            a1: TimeFn::constant(a1),
            a0: TimeFn::constant(a0),
            drift: DriftSpec::Affine { slope: TimeFn::constant(beta1), intercept: TimeFn::constant(beta0) },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.a1.check()?;
        self.a0.check()?;
        self.drift.check()
    }

    /// The same equation as a general coefficient set, for the
    /// characteristic-system solver. Bounds are sampled on `[0, horizon]`.
    pub fn to_coefficient_set(&self, horizon: f64) -> Result<CoefficientSet> {
        self.validate()?;
        let (a1, a0) = (self.a1.clone(), self.a0.clone());
        let (d1, d2) = (self.drift.clone(), self.drift.clone());
        let sigma_l = self.a1.sup_abs(horizon);
        let drift_l = self.drift.lipschitz(horizon);
        let l = sigma_l.max(self.a0.sup_abs(horizon)).max(drift_l).max(f64::MIN_POSITIVE);
        let a1x = a1.clone();
        Ok(CoefficientSet::new(
            "quasilinear",
            Arc::new(move |t, x| d1.value(t, x)),
            Arc::new(move |t, x| d2.derivative(t, x)),
            Arc::new(move |t, x| a1.eval(t) * x + a0.eval(t)),
            Arc::new(move |t, _| a1x.eval(t)),
            Arc::new(|_, _| 0.0),
            l,
            0.0,
        )?
        .with_bounds(drift_l, sigma_l))
    }
}

/// `Γ(t)` and `Λ(t)` densities at every node: `h(t,u)` and `−h(t,u)`.
pub fn quasilinear_gamma_lambda(
    coeffs: &QuasilinearCoeffs,
    kernel: &Kernel,
    grid: &TimeGrid,
) -> Result<(ShiftFamily, ShiftFamily)> {
    coeffs.a1.check()?;
    let gamma = shift_family(kernel, grid, &coeffs.a1.sample(grid));
    let lambda = gamma.negated();
    Ok((gamma, lambda))
}

/// `A₁(t) = exp{−∫_0^t a₁ δB}` and `A₂(t) = ∫_0^t A₁ a₀ δB` at the nodes.
#[derive(Debug, Clone)]
pub struct IntegratingFactors {
    pub a1: SampledPath,
    pub a2: SampledPath,
}

pub fn integrating_factors(coeffs: &QuasilinearCoeffs, driver: &SampledPath) -> Result<IntegratingFactors> {
    coeffs.a1.check()?;
    coeffs.a0.check()?;
    let grid = *driver.grid();
    let (f1, f2) = factors(&coeffs.a1.sample(&grid), &coeffs.a0.sample(&grid), driver.values(), &grid.nodes())?;
    Ok(IntegratingFactors { a1: SampledPath::new(grid, f1)?, a2: SampledPath::new(grid, f2)? })
}

fn factors(a1: &[f64], a0: &[f64], driver: &[f64], nodes: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let m = driver.len();
    let ia = riemann_cumulative(&a1[..m], driver, EvalPoint::Mid);
    let mut f1 = Vec::with_capacity(m);
    for (k, e) in ia.iter().enumerate() {
        if e.abs() > MAX_EXPONENT || !e.is_finite() {
            return Err(Error::Overflow { time: nodes[k], exponent: -e });
        }
        f1.push((-e).exp());
    }
    let weighted: Vec<f64> = f1.iter().zip(a0).map(|(f, a)| f * a).collect();
    let f2 = riemann_cumulative(&weighted, driver, EvalPoint::Mid);
    Ok((f1, f2))
}

/// Grid data shared by every solve of one quasilinear equation.
struct Prepared<'a> {
    coeffs: &'a QuasilinearCoeffs,
    nodes: Vec<f64>,
    a1: Vec<f64>,
    a0: Vec<f64>,
    /// `∫_0^s a₁(u) φ(s,u) du` at the nodes.
    g: Vec<f64>,
}

impl<'a> Prepared<'a> {
    fn new(coeffs: &'a QuasilinearCoeffs, grid: &TimeGrid, table: &CellTable) -> Result<Self> {
        coeffs.validate()?;
        let a1 = coeffs.a1.sample(grid);
        let g = (0..grid.len()).map(|i| table.integrate(&a1, 0, i, i)).collect();
        Ok(Self { coeffs, nodes: grid.nodes(), a0: coeffs.a0.sample(grid), a1, g })
    }

    /// `z` on the nodes covered by `driver` (a prefix of the grid), via
    /// `y = A₁z − A₂` and `ẏ = A₁ 𝔟(t, (y + A₂)/A₁)`.
    fn z_along(&self, eta: f64, driver: &[f64]) -> Result<Vec<f64>> {
        let (f1, f2) = factors(&self.a1, &self.a0, driver, &self.nodes)?;
        let mut z = Vec::with_capacity(driver.len());
        z.push(eta);
        let mut y = eta;
        for k in 0..driver.len() - 1 {
            let cell = Cell {
                t0: self.nodes[k],
                h: self.nodes[k + 1] - self.nodes[k],
                f1: (f1[k], f1[k + 1]),
                f2: (f2[k], f2[k + 1]),
                g: (self.g[k], self.g[k + 1]),
            };
            y = self.step(&cell, cell.t0, cell.h, y, 0)?;
            z.push((y + f2[k + 1]) / f1[k + 1]);
        }
        Ok(z)
    }

    fn rhs(&self, cell: &Cell, t: f64, y: f64) -> f64 {
        let w = (t - cell.t0) / cell.h;
        let lerp = |(a, b): (f64, f64)| a + w * (b - a);
        let (f1, f2, g) = (lerp(cell.f1), lerp(cell.f2), lerp(cell.g));
        let z = (y + f2) / f1;
        let sigma = self.coeffs.a1.eval(t) * z + self.coeffs.a0.eval(t);
        f1 * (self.coeffs.drift.value(t, z) + sigma * g)
    }

    fn rk4(&self, cell: &Cell, t: f64, h: f64, y: f64) -> f64 {
        let k1 = self.rhs(cell, t, y);
        let k2 = self.rhs(cell, t + 0.5 * h, y + 0.5 * h * k1);
        let k3 = self.rhs(cell, t + 0.5 * h, y + 0.5 * h * k2);
        let k4 = self.rhs(cell, t + h, y + h * k3);
        y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    }

    /// One RK4 step checked against two half steps; halves on rejection.
    fn step(&self, cell: &Cell, t: f64, h: f64, y: f64, depth: u32) -> Result<f64> {
        let full = self.rk4(cell, t, h, y);
        let half = self.rk4(cell, t + 0.5 * h, 0.5 * h, self.rk4(cell, t, 0.5 * h, y));
        if full.is_finite() && half.is_finite() && (full - half).abs() <= ODE_TOL * (1.0 + half.abs()) {
            return Ok(half);
        }
        if depth >= MAX_HALVINGS {
            return Err(Error::StepFailure { time: t, halvings: depth });
        }
        let mid = self.step(cell, t, 0.5 * h, y, depth + 1)?;
        self.step(cell, t + 0.5 * h, 0.5 * h, mid, depth + 1)
    }
}

struct Cell {
    t0: f64,
    h: f64,
    f1: (f64, f64),
    f2: (f64, f64),
    g: (f64, f64),
}

/// `z` along the unshifted driver: the solution of the second
/// characteristic equation, before composing with `Λ`.
pub fn quasilinear_z(coeffs: &QuasilinearCoeffs, eta: f64, driver: &SampledPath, kernel: &Kernel) -> Result<SampledPath> {
    let grid = *driver.grid();
    let table = kernel.cell_table(&grid);
    let prep = Prepared::new(coeffs, &grid, &table)?;
    SampledPath::new(grid, prep.z_along(eta, driver.values())?)
}

/// `x(t) = z(t, Λ(t)ω)` at every node: for each `t` the integrating factors
/// and the ODE are recomputed along `ω − ∫_0^· h(t,u) du` on `[0, t]`.
pub fn solve_quasilinear(
    coeffs: &QuasilinearCoeffs,
    eta: f64,
    driver: &SampledPath,
    kernel: &Kernel,
) -> Result<SampledPath> {
    let grid = *driver.grid();
    let table = kernel.cell_table(&grid);
    let prep = Prepared::new(coeffs, &grid, &table)?;
    let n = grid.len();
    let dt = grid.dt();
    let base = driver.values();
    let mut h = vec![0.0; n];
    let mut out = Vec::with_capacity(n);
    out.push(eta);
    let mut shifted = Vec::with_capacity(n);
    for i in 0..n - 1 {
        for (l, hl) in h.iter_mut().enumerate() {
            let d = i as isize - l as isize;
            *hl += table.lo(d) * prep.a1[i] + table.hi(d) * prep.a1[i + 1];
        }
        let shift = trapezoid_cumulative(&h[..i + 2], dt);
        shifted.clear();
        shifted.extend(base[..i + 2].iter().zip(&shift).map(|(b, s)| b - s));
        let z = prep.z_along(eta, &shifted)?;
        out.push(z[i + 1]);
    }
    SampledPath::new(grid, out)
}

/// The transition factors of a linear equation along one driver.
///
/// `phi(i, j)` is `Φ(t_i, s_j) = exp{∫_s^t β₁ + ∫_s^t a₁ δB + ∫_s^t a₁(u) g(u) du}`
/// with `g(u) = ∫_0^u a₁(v) φ(u,v) dv`, and `psi(i, j)` is
/// `Ψ(t_i, s_j) = exp{∫_s^t β₁ + ∫_s^t a₁ δB − ½∫_s^t∫_s^t a₁a₁φ}`.
#[derive(Debug, Clone)]
pub struct LinearKernels {
    grid: TimeGrid,
    table: CellTable,
    a1: Vec<f64>,
    drift_cum: Vec<f64>,
    noise_cum: Vec<f64>,
    self_cum: Vec<f64>,
}

impl LinearKernels {
    pub fn new(beta1: &TimeFn, a1: &TimeFn, driver: &SampledPath, kernel: &Kernel) -> Result<Self> {
        beta1.check()?;
        a1.check()?;
        let grid = *driver.grid();
        let table = kernel.cell_table(&grid);
        let a1v = a1.sample(&grid);
        let g: Vec<f64> = (0..grid.len()).map(|i| a1v[i] * table.integrate(&a1v, 0, i, i)).collect();
        Ok(Self {
            drift_cum: trapezoid_cumulative(&beta1.sample(&grid), grid.dt()),
            noise_cum: riemann_cumulative(&a1v, driver.values(), EvalPoint::Mid),
            self_cum: trapezoid_cumulative(&g, grid.dt()),
            grid,
            table,
            a1: a1v,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    fn check(&self, i: usize, j: usize) -> Result<()> {
        if j > i || i >= self.grid.len() {
            return Err(Error::domain(format!("transition factor needs s <= t on the grid, got nodes ({i}, {j})")));
        }
        Ok(())
    }

    pub fn phi(&self, i: usize, j: usize) -> Result<f64> {
        self.check(i, j)?;
        let e = self.drift_cum[i] - self.drift_cum[j] + self.noise_cum[i] - self.noise_cum[j] + self.self_cum[i]
            - self.self_cum[j];
        exp_checked(e, self.grid.node(i))
    }

    /// Costs `O((i − j)²)`.
    pub fn psi(&self, i: usize, j: usize) -> Result<f64> {
        self.check(i, j)?;
        let inner: Vec<f64> = (0..=i).map(|u| if u < j { 0.0 } else { self.tail(u, i) }).collect();
        let e = self.drift_cum[i] - self.drift_cum[j] + self.noise_cum[i] - self.noise_cum[j]
            - self.tail_quadrature(&inner, j, i);
        exp_checked(e, self.grid.node(i))
    }

    /// `∫_{u}^{t_i} a₁(v) φ(v, u) dv` at node `u`.
    fn tail(&self, u: usize, i: usize) -> f64 {
        self.table.integrate(&self.a1, u, i, u)
    }

    /// `∫_{s_j}^{t_i} a₁(u)·inner(u) du` by the trapezoid rule.
    fn tail_quadrature(&self, inner: &[f64], j: usize, i: usize) -> f64 {
        let dt = self.grid.dt();
        (j..i).map(|u| 0.5 * dt * (self.a1[u] * inner[u] + self.a1[u + 1] * inner[u + 1])).sum()
    }
}

fn exp_checked(e: f64, time: f64) -> Result<f64> {
    if !(e.abs() <= MAX_EXPONENT) {
        return Err(Error::Overflow { time, exponent: e });
    }
    Ok(e.exp())
}

/// Closed-form solution of `dx = (β₁x + β₀) dt + (a₁x + a₀) dB`, `x(0) = x₀`:
///
/// `x(t) = Ψ(t,0)x₀ + ∫_0^t Ψ(t,s)β₀ ds + ∫_0^t Ψ(t,s)a₀ δB(s) − ∫_0^t Ψ(t,s) a₀(s) k(t,s) ds`
///
/// with `k(t,s) = ∫_s^t a₁(v) φ(s,v) dv`. The last term comes from moving
/// the `δB` integral to the shifted path. Runs in `O(N²)`.
#[allow(clippy::too_many_arguments)]
pub fn solve_linear_explicit(
    beta1: &TimeFn,
    beta0: &TimeFn,
    a1: &TimeFn,
    a0: &TimeFn,
    x0: f64,
    driver: &SampledPath,
    kernel: &Kernel,
) -> Result<SampledPath> {
    for f in [beta1, beta0, a1, a0] {
        f.check()?;
    }
    let grid = *driver.grid();
    let n = grid.len();
    let dt = grid.dt();
    let table = kernel.cell_table(&grid);
    let b = driver.values();
    let a1v = a1.sample(&grid);
    let a0v = a0.sample(&grid);
    let b0v = beta0.sample(&grid);
    let drift_cum = trapezoid_cumulative(&beta1.sample(&grid), dt);
    let noise_cum = riemann_cumulative(&a1v, b, EvalPoint::Mid);

    let mut tail = vec![0.0; n];
    let mut psi = vec![0.0; n];
    let mut out = Vec::with_capacity(n);
    out.push(x0);
    for i in 1..n {
        // k(t_i, u_l) from k(t_{i−1}, u_l) by one more cell
        for (l, kl) in tail.iter_mut().enumerate().take(i) {
            let d = (i - 1) as isize - l as isize;
            *kl += table.lo(d) * a1v[i - 1] + table.hi(d) * a1v[i];
        }
        tail[i] = 0.0;
        let mut q = 0.0;
        for j in (0..=i).rev() {
            if j < i {
                q += 0.5 * dt * (a1v[j] * tail[j] + a1v[j + 1] * tail[j + 1]);
            }
            let e = drift_cum[i] - drift_cum[j] + noise_cum[i] - noise_cum[j] - q;
            psi[j] = exp_checked(e, grid.node(i))?;
        }
        let mut x = psi[0] * x0;
        for k in 0..i {
            let lin = |j: usize| psi[j] * (b0v[j] - a0v[j] * tail[j]);
            x += 0.5 * dt * (lin(k) + lin(k + 1));
            x += 0.5 * (psi[k] * a0v[k] + psi[k + 1] * a0v[k + 1]) * (b[k + 1] - b[k]);
        }
        out.push(x);
    }
    SampledPath::new(grid, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::char_system::CharSystem;
    use crate::fbm::{sample_fbm, FbmConfig};
    use crate::time_grid::HolderExponent;

    fn fbm(h: f64, n: usize, seed: u64) -> SampledPath {
        sample_fbm(&FbmConfig::new(h, TimeGrid::new(1.0, n).unwrap(), seed).unwrap()).unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-12)
    }

    #[test]
    fn shift_families_closed_form() {
        let grid = TimeGrid::new(1.0, 64).unwrap();
        let kernel = Kernel::new(0.75).unwrap();
        let zero = QuasilinearCoeffs::linear(0.0, 0.0, 0.0, 0.0);
        let (g, l) = quasilinear_gamma_lambda(&zero, &kernel, &grid).unwrap();
        assert!(g.row(64).iter().chain(l.row(64)).all(|v| *v == 0.0));

        let one = QuasilinearCoeffs::linear(0.0, 0.0, 1.0, 0.0);
        let (g, l) = quasilinear_gamma_lambda(&one, &kernel, &grid).unwrap();
        assert!((g.row(64)[32] - 1.0606602).abs() < 1e-6);
        assert!(g.row(40).iter().zip(l.row(40)).all(|(a, b)| a == &-b));
    }

    #[test]
    fn integrating_factor_examples() {
        let b = fbm(0.75, 128, 3);
        let none = integrating_factors(&QuasilinearCoeffs::linear(0.0, 0.0, 0.0, 0.0), &b).unwrap();
        assert!(none.a1.values().iter().all(|v| *v == 1.0));
        assert!(none.a2.values().iter().all(|v| *v == 0.0));

        let unit = integrating_factors(&QuasilinearCoeffs::linear(0.0, 0.0, 1.0, 0.0), &b).unwrap();
        for (f, bv) in unit.a1.values().iter().zip(b.values()) {
            assert!((f - (-bv).exp()).abs() < 1e-12);
        }

        let huge = QuasilinearCoeffs::linear(0.0, 0.0, 1e6, 0.0);
        assert!(matches!(integrating_factors(&huge, &b), Err(Error::Overflow { .. })));
    }

    #[test]
    fn path_dependent_coefficients_are_rejected() {
        let mut c = QuasilinearCoeffs::linear(0.0, 0.0, 1.0, 0.0);
        c.a1 = TimeFn::PathDependent;
        let b = fbm(0.75, 16, 1);
        let k = Kernel::new(0.75).unwrap();
        assert!(matches!(solve_quasilinear(&c, 1.0, &b, &k), Err(Error::Domain(_))));
    }

    #[test]
    fn degenerate_and_trivial_cases() {
        let b = fbm(0.75, 256, 5);
        let k = Kernel::new(0.75).unwrap();
        let ode = solve_quasilinear(&QuasilinearCoeffs::linear(1.0, 0.0, 0.0, 0.0), 2.0, &b, &k).unwrap();
        assert!(rel(ode.last(), 2.0 * 1f64.exp()) < 1e-10);

        let ramp = solve_linear_explicit(
            &TimeFn::constant(0.0),
            &TimeFn::constant(1.0),
            &TimeFn::constant(0.0),
            &TimeFn::constant(0.0),
            0.5,
            &b,
            &k,
        )
        .unwrap();
        for (i, x) in ramp.values().iter().enumerate() {
            assert!((x - 0.5 - b.grid().node(i)).abs() < 1e-12);
        }
    }

    #[test]
    fn geometric_case_matches_lognormal_formula() {
        let (abar, h) = (0.8, 0.75);
        let b = fbm(h, 1024, 11);
        let k = Kernel::new(h).unwrap();
        let exact = |i: usize| {
            let t = b.grid().node(i);
            (abar * b.value(i) - 0.5 * abar * abar * t.powf(2.0 * h)).exp()
        };
        let c = QuasilinearCoeffs::linear(0.0, 0.0, abar, 0.0);
        let zero = TimeFn::constant(0.0);
        let explicit = solve_linear_explicit(&zero, &zero, &c.a1, &zero, 1.0, &b, &k).unwrap();
        let quasi = solve_quasilinear(&c, 1.0, &b, &k).unwrap();
        for i in [256, 700, 1024] {
            assert!(rel(explicit.value(i), exact(i)) < 2e-3, "explicit at {i}");
            assert!(rel(quasi.value(i), exact(i)) < 2e-3, "quasilinear at {i}");
        }
    }

    #[test]
    fn constant_coefficient_kernel_correction() {
        // ½∫_s^t∫_s^t φ = ½(t − s)^{2H}
        let h = 0.75;
        let b = fbm(h, 512, 2);
        let k = Kernel::new(h).unwrap();
        let lk = LinearKernels::new(&TimeFn::constant(0.0), &TimeFn::constant(1.0), &b, &k).unwrap();
        for (i, j) in [(512, 0), (400, 100), (300, 290)] {
            let psi = lk.psi(i, j).unwrap();
            let e = b.value(i) - b.value(j) - 0.5 * (lk.grid().node(i) - lk.grid().node(j)).powf(2.0 * h);
            assert!((psi.ln() - e).abs() < 2e-3, "({i}, {j}): {} vs {e}", psi.ln());
        }
        assert_eq!(lk.psi(100, 100).unwrap(), 1.0);
        assert_eq!(lk.phi(100, 100).unwrap(), 1.0);
        assert!(lk.psi(3, 4).is_err());
    }

    #[test]
    fn psi_is_phi_along_the_inverse_shift() {
        let h = 0.7;
        let b = fbm(h, 256, 4);
        let k = Kernel::new(h).unwrap();
        let a1 = TimeFn::Polynomial { coeffs: vec![0.6, 0.3] };
        let beta1 = TimeFn::constant(-0.2);
        let c = QuasilinearCoeffs { a1: a1.clone(), a0: TimeFn::default(), drift: DriftSpec::Logistic { rate: 0.0 } };
        let (_, lambda) = quasilinear_gamma_lambda(&c, &k, b.grid()).unwrap();
        let i = 200;
        let shift = lambda.map(i).cumulative();
        let moved = SampledPath::new(*b.grid(), b.values().iter().zip(shift.values()).map(|(x, s)| x + s).collect())
            .unwrap();
        let base = LinearKernels::new(&beta1, &a1, &b, &k).unwrap();
        let along = LinearKernels::new(&beta1, &a1, &moved, &k).unwrap();
        for j in [0, 50, 150, 199] {
            assert!(rel(along.phi(i, j).unwrap(), base.psi(i, j).unwrap()) < 1e-3, "j = {j}");
        }
    }

    #[test]
    fn quasilinear_matches_explicit_on_affine_family() {
        let h = 0.75;
        let k = Kernel::new(h).unwrap();
        let c = QuasilinearCoeffs::linear(0.3, 0.2, 0.5, 0.4);
        let DriftSpec::Affine { slope, intercept } = &c.drift else { unreachable!() };
        let fine = fbm(h, 2048, 9);
        let mut gaps = Vec::new();
        for n in [256, 512, 1024, 2048] {
            let b = fine.subsample(2048 / n).unwrap();
            let quasi = solve_quasilinear(&c, 1.0, &b, &k).unwrap();
            let explicit = solve_linear_explicit(slope, intercept, &c.a1, &c.a0, 1.0, &b, &k).unwrap();
            gaps.push(rel(quasi.last(), explicit.last()));
        }
        assert!(gaps[3] < 1e-3, "{gaps:?}");
        assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{gaps:?}");
    }

    #[test]
    fn transformed_variable_solves_the_ode() {
        // z from the characteristic-system fixed point, then y = A₁z − A₂
        // differentiated numerically against A₁·𝔟(t, z)
        let h = 0.75;
        let k = Kernel::new(h).unwrap();
        let c = QuasilinearCoeffs {
            a1: TimeFn::constant(0.4),
            a0: TimeFn::constant(0.2),
            drift: DriftSpec::Logistic { rate: 0.3 },
        };
        let fine = fbm(h, 2048, 21);
        let mut errs = Vec::new();
        for n in [512, 2048] {
            let b = fine.subsample(2048 / n).unwrap();
            let sys = CharSystem::new(c.to_coefficient_set(1.0).unwrap(), k, HolderExponent::default_for(h)).unwrap();
            let (z, _) = sys.solve_z(0.5, &b).unwrap();
            let f = integrating_factors(&c, &b).unwrap();
            let table = k.cell_table(b.grid());
            let a1 = c.a1.sample(b.grid());
            let dt = b.grid().dt();
            let mut worst: f64 = 0.0;
            for m in 0..n {
                let y = |i: usize| f.a1.value(i) * z.value(i) - f.a2.value(i);
                let slope = (y(m + 1) - y(m)) / dt;
                let rhs = |i: usize| {
                    let t = b.grid().node(i);
                    let g = table.integrate(&a1, 0, i, i);
                    f.a1.value(i) * (c.drift.value(t, z.value(i)) + (0.4 * z.value(i) + 0.2) * g)
                };
                worst = worst.max((slope - 0.5 * (rhs(m) + rhs(m + 1))).abs());
            }
            errs.push(worst);
        }
        assert!(errs[1] < errs[0], "{errs:?}");
        assert!(errs[1] < 0.05, "{errs:?}");
    }

    #[test]
    fn config_round_trip() {
        let json = r#"{"a1": {"kind": "constant", "value": 0.5},
                       "drift": {"kind": "affine", "slope": {"kind": "polynomial", "coeffs": [0.1, 0.2]}}}"#;
        let c: QuasilinearCoeffs = serde_json::from_str(json).unwrap();
        assert_eq!(c.a1.eval(0.3), 0.5);
        assert!(c.a0.is_zero());
        assert!((c.drift.value(0.5, 2.0) - 0.4).abs() < 1e-15);
        let back: QuasilinearCoeffs = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back.drift.value(0.5, 2.0), c.drift.value(0.5, 2.0));

        let bad = r#"{"a1": {"kind": "path_dependent"}, "drift": {"kind": "logistic", "rate": 1}}"#;
        let c: QuasilinearCoeffs = serde_json::from_str(bad).unwrap();
        assert!(c.validate().is_err());
    }
}
