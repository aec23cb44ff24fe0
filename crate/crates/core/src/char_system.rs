//! Characteristic system for Itô SDEs `dx = b(t,x) dt + σ(t,x) dB` with
//! deterministic coefficients.
//!
//! The solution is obtained as `x(t) = z(t, Λ(t))`: `z` solves a pathwise
//! equation with an extra kernel drift, `Γ(t)` shifts the driving path by an
//! absolutely continuous function, and `Λ(t)` is its inverse, found by fixed
//! point iteration on the shift density.

use std::fmt;
use std::sync::Arc;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::integrators::trapezoid_cumulative;
use crate::picard::{solve_fixed_point_from, ContractionProblem, PicardReport, ProgressiveMap};
use crate::time_grid::{holder_seminorm, CellTable, HolderExponent, Kernel, SampledPath, TimeGrid};

pub type CoeffFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Drift `b`, diffusion `σ` and the partial derivatives the solver needs.
///
/// `lipschitz` bounds `|b|, |σ|` by `L(1 + |x|)` and `|b_x|, |σ_x| + |σ_xx|`
/// by `L`. The sharper `drift_lipschitz = sup |b_x|`,
/// `sigma_lipschitz = sup |σ_x|` and `second_order = sup |σ_xx|` set the
/// Picard window lengths.
#[derive(Clone)]
pub struct CoefficientSet {
    pub name: String,
    pub b: CoeffFn,
    pub b_x: CoeffFn,
    pub sigma: CoeffFn,
    pub sigma_x: CoeffFn,
    pub sigma_xx: CoeffFn,
    pub lipschitz: f64,
    pub drift_lipschitz: f64,
    pub sigma_lipschitz: f64,
    pub second_order: f64,
}

impl fmt::Debug for CoefficientSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientSet")
            .field("name", &self.name)
            .field("lipschitz", &self.lipschitz)
            .field("second_order", &self.second_order)
            .finish_non_exhaustive()
    }
}

fn arc(f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> CoeffFn {
    Arc::new(f)
}

impl CoefficientSet {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        b: CoeffFn,
        b_x: CoeffFn,
        sigma: CoeffFn,
        sigma_x: CoeffFn,
        sigma_xx: CoeffFn,
        lipschitz: f64,
        second_order: f64,
    ) -> Result<Self> {
        if !(lipschitz > 0.0 && lipschitz.is_finite()) {
            return Err(Error::domain(format!("Lipschitz constant must be positive, got {lipschitz}")));
        }
        if !(second_order >= 0.0) {
            return Err(Error::domain("second-order bound must be nonnegative"));
        }
        Ok(Self {
            name: name.into(),
            b,
            b_x,
            sigma,
            sigma_x,
            sigma_xx,
            lipschitz,
            drift_lipschitz: lipschitz,
            sigma_lipschitz: lipschitz,
            second_order,
        })
    }

    /// Replaces the default (`L`) bounds on `|b_x|` and `|σ_x|`.
    pub fn with_bounds(mut self, drift_lipschitz: f64, sigma_lipschitz: f64) -> Self {
        self.drift_lipschitz = drift_lipschitz;
        self.sigma_lipschitz = sigma_lipschitz;
        self
    }

    /// `b = b̄ x`, `σ = ā x`.
    pub fn linear(drift: f64, diffusion: f64) -> Self {
        Self {
            name: format!("linear({drift}, {diffusion})"),
            b: arc(move |_, x| drift * x),
            b_x: arc(move |_, _| drift),
            sigma: arc(move |_, x| diffusion * x),
            sigma_x: arc(move |_, _| diffusion),
            sigma_xx: arc(|_, _| 0.0),
            lipschitz: drift.abs().max(diffusion.abs()).max(f64::MIN_POSITIVE),
            drift_lipschitz: drift.abs(),
            sigma_lipschitz: diffusion.abs(),
            second_order: 0.0,
        }
    }

    /// `b = cos x`, `σ = c·sin x`. Globally Lipschitz with `L = max(1, 2|c|)`.
    pub fn sine(scale: f64) -> Self {
        Self {
            name: format!("sine({scale})"),
            b: arc(|_, x| x.cos()),
            b_x: arc(|_, x| -x.sin()),
            sigma: arc(move |_, x| scale * x.sin()),
            sigma_x: arc(move |_, x| scale * x.cos()),
            sigma_xx: arc(move |_, x| -scale * x.sin()),
            lipschitz: (2.0 * scale.abs()).max(1.0),
            drift_lipschitz: 1.0,
            sigma_lipschitz: scale.abs(),
            second_order: scale.abs(),
        }
    }

    /// `b = x(1 − x)`, `σ = ε x`.
    ///
    /// The logistic drift is only locally Lipschitz; it is evaluated with `x`
    /// clamped to `[−LOGISTIC_CAP, LOGISTIC_CAP]`, which makes it globally
    /// Lipschitz with `L = 2·LOGISTIC_CAP + 1` and leaves trajectories that
    /// stay inside the cap untouched.
    pub fn logistic(eps: f64) -> Self {
        let clamp = |x: f64| x.clamp(-LOGISTIC_CAP, LOGISTIC_CAP);
        Self {
            name: format!("logistic({eps})"),
            b: arc(move |_, x| {
                let y = clamp(x);
                y * (1.0 - y)
            }),
            b_x: arc(move |_, x| if x.abs() < LOGISTIC_CAP { 1.0 - 2.0 * x } else { 0.0 }),
            sigma: arc(move |_, x| eps * x),
            sigma_x: arc(move |_, _| eps),
            sigma_xx: arc(|_, _| 0.0),
            lipschitz: (2.0 * LOGISTIC_CAP + 1.0).max(eps.abs()),
            drift_lipschitz: 2.0 * LOGISTIC_CAP + 1.0,
            sigma_lipschitz: eps.abs(),
            second_order: 0.0,
        }
    }
}

pub const LOGISTIC_CAP: f64 = 10.0;

/// Absolutely continuous shift of the driving path at a fixed time, stored
/// through its density.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftMap {
    pub base_time: f64,
    pub density: SampledPath,
}

impl ShiftMap {
    /// Discrete `H_p` norm `(∫ |density|^p du)^{1/p}` (trapezoid rule).
    pub fn hp_norm(&self, p: f64) -> f64 {
        hp_norm(self.density.values(), self.density.grid().dt(), p)
    }

    /// `u ↦ ∫_0^u density`, the shift itself.
    pub fn cumulative(&self) -> SampledPath {
        let grid = *self.density.grid();
        SampledPath::new(grid, trapezoid_cumulative(self.density.values(), grid.dt()))
            .expect("integral of a finite density is finite")
    }
}

pub(crate) fn hp_norm(d: &[f64], dt: f64, p: f64) -> f64 {
    let mut acc = 0.0;
    for k in 0..d.len().saturating_sub(1) {
        acc += 0.5 * dt * (d[k].abs().powf(p) + d[k + 1].abs().powf(p));
    }
    acc.powf(1.0 / p)
}

/// The shift densities `h(t_i, u_l)` for every pair of nodes.
#[derive(Debug, Clone)]
pub struct ShiftFamily {
    grid: TimeGrid,
    rows: Vec<f64>,
}

impl ShiftFamily {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// Density row at node `i`.
    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.grid.len();
        &self.rows[i * n..(i + 1) * n]
    }

    pub fn map(&self, i: usize) -> ShiftMap {
        ShiftMap {
            base_time: self.grid.node(i),
            density: SampledPath::new(self.grid, self.row(i).to_vec()).expect("finite densities"),
        }
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// The family with every density negated.
    pub fn negated(&self) -> Self {
        Self { grid: self.grid, rows: self.rows.iter().map(|v| -v).collect() }
    }
}

/// `h(t_i, u_l) = ∫_0^{t_i} c(s) φ(s, u_l) ds` for the piecewise-linear
/// interpolant of the node values `c`.
pub(crate) fn shift_family(kernel: &Kernel, grid: &TimeGrid, c: &[f64]) -> ShiftFamily {
    let n = grid.len();
    let table = kernel.cell_table(grid);
    let mut rows = vec![0.0; n * n];
    for i in 0..n - 1 {
        let (prev, next) = rows.split_at_mut((i + 1) * n);
        let prev = &prev[i * n..];
        let next = &mut next[..n];
        for l in 0..n {
            let d = i as isize - l as isize;
            next[l] = prev[l] + table.lo(d) * c[i] + table.hi(d) * c[i + 1];
        }
    }
    ShiftFamily { grid: *grid, rows }
}

/// Solver settings shared by all operations on one equation.
#[derive(Debug, Clone)]
pub struct CharSystem {
    pub coeffs: CoefficientSet,
    pub kernel: Kernel,
    pub beta: HolderExponent,
    /// Exponent of the `H_p` norm used for shift densities.
    pub p: f64,
    pub picard_tol: f64,
    pub picard_max_iter: usize,
    pub inversion_tol: f64,
    pub inversion_max_iter: usize,
}

/// `p = (1 + 1/(2−2H))/2`, the midpoint of the admissible range.
pub fn default_p(hurst: f64) -> f64 {
    0.5 * (1.0 + 1.0 / (2.0 - 2.0 * hurst))
}

/// Result of [`CharSystem::invert_gamma`].
#[derive(Debug, Clone)]
pub struct InversionReport {
    pub lambda: ShiftMap,
    pub iterations: usize,
    /// `H_p` distances of successive densities.
    pub differences: Vec<f64>,
    /// `max_u |Γ(t)(Λ(t)ω) − ω|(u)` for the returned density.
    pub identity_residual: f64,
    /// Solution of the `z` equation along `Λ(t)ω` on `[0, t]`.
    pub z_shifted: SampledPath,
}

/// Output of [`CharSystem::compose_solution`].
#[derive(Debug, Clone)]
pub struct Composition {
    /// Times for which a value was produced (a prefix of the request).
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    /// First requested time at which inversion failed.
    pub horizon: Option<HorizonEvent>,
    /// Crude a priori invertibility horizon, for comparison.
    pub theoretical_horizon: f64,
}

/// Where and how the inverse-shift iteration stopped contracting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HorizonEvent {
    pub time: f64,
    pub ratio: f64,
    pub iterations: usize,
}

impl From<HorizonEvent> for Error {
    fn from(e: HorizonEvent) -> Self {
        Error::HorizonExceeded { time: e.time, ratio: e.ratio, iterations: e.iterations }
    }
}

impl Composition {
    pub fn is_complete(&self) -> bool {
        self.horizon.is_none()
    }
}

impl CharSystem {
    pub fn new(coeffs: CoefficientSet, kernel: Kernel, beta: HolderExponent) -> Result<Self> {
        let beta = HolderExponent::for_driver(beta.value(), kernel.hurst())?;
        Ok(Self {
            coeffs,
            kernel,
            beta,
            p: default_p(kernel.hurst()),
            picard_tol: 1e-10,
            picard_max_iter: 200,
            inversion_tol: 1e-8,
            inversion_max_iter: 50,
        })
    }

    /// Picard constants for the `z` map. The Young term dominates: on a
    /// window of length `τ` its Lipschitz constant in the sup + Hölder norm
    /// scales like `sup|σ_x|(1 + ‖B‖_β) τ^β`, while the drift and kernel
    /// terms gain a full power of `τ`. So `γ = β` and
    /// `κ = sup|σ_x|(1 + ‖B‖_{a,b,β}) + sup|b_x| + sup|σ_x|² H T^{2H−1}`.
    /// Curvature of `σ` enters through `‖z‖_β`, damped by `τ^β ≤ 1/(2κ)`
    /// because the iterates agree at the window start:
    /// `h = κ(1 + sup|σ_xx| / sup|σ_x| · ‖z‖_β / (2κ))`.
    pub fn contraction_problem(&self, driver: &SampledPath) -> Result<ContractionProblem> {
        let h = self.kernel.hurst();
        let horizon = driver.grid().horizon();
        let ls = self.coeffs.sigma_lipschitz;
        let rest = self.coeffs.drift_lipschitz + ls * ls * h * horizon.powf(2.0 * h - 1.0);
        let beta = self.beta.value();
        let dt = driver.grid().dt();
        let delta = (0.25 * horizon).max(dt);
        let values: Arc<Vec<f64>> = Arc::new(driver.values().to_vec());
        let global = holder_seminorm(&values, 1, dt, beta);
        let kappa = (ls * (1.0 + global) + rest).max(1e-12);
        let curvature = if self.coeffs.second_order > 0.0 {
            self.coeffs.second_order / ls.max(f64::MIN_POSITIVE) / (2.0 * kappa)
        } else {
            0.0
        };
        let last = values.len() - 1;
        let local = move |a: f64, b: f64| {
            let i = ((a / dt).round() as usize).min(last);
            let j = ((b / dt).round() as usize).clamp(i, last);
            (ls * (1.0 + holder_seminorm(&values[i..=j], 1, dt, beta)) + rest).max(1e-12)
        };
        Ok(ContractionProblem::with_bound(kappa, beta, self.beta, delta, move |_, _, m3, m4| {
            kappa * (1.0 + curvature * m3.max(m4))
        })?
        .with_kappa_on(local))
    }

    /// Solves `z(t) = η + ∫ b(s,z) ds + ∫ σ(s,z) δB + ∫_0^t ∫_0^s σ(s,z(s)) σ_x(u,z(u)) φ(s,u) du ds`
    /// along `driver` by Picard iteration.
    pub fn solve_z(&self, eta: f64, driver: &SampledPath) -> Result<(SampledPath, PicardReport)> {
        self.solve_z_from(eta, driver, None)
    }

    fn solve_z_from(&self, eta: f64, driver: &SampledPath, warm: Option<&[f64]>) -> Result<(SampledPath, PicardReport)> {
        let grid = *driver.grid();
        let problem = self.contraction_problem(driver)?;
        let table = self.kernel.cell_table(&grid);
        let mut map = ZMap::new(&self.coeffs, eta, driver.values(), &grid, &table);
        let report = solve_fixed_point_from(&mut map, &problem, &grid, self.picard_tol, self.picard_max_iter, warm)?;
        let z = SampledPath::new(grid, report.solution.clone()).map_err(|_| Error::ContractionFailure {
            start: 0.0,
            end: grid.horizon(),
            ratio: f64::INFINITY,
            streak: 0,
        })?;
        Ok((z, report))
    }

    /// `h(t, u) = ∫_0^t σ_x(s, z(s)) φ(s, u) ds` for every pair of nodes.
    pub fn build_gamma(&self, z: &SampledPath) -> ShiftFamily {
        let grid = *z.grid();
        let n = grid.len();
        let c: Vec<f64> = (0..n).map(|i| (self.coeffs.sigma_x)(grid.node(i), z.value(i))).collect();
        shift_family(&self.kernel, &grid, &c)
    }

    /// Last row of [`Self::build_gamma`]: the density of `Γ(t_N) − ω`.
    fn gamma_density_at_end(&self, z: &SampledPath, table: &CellTable) -> Vec<f64> {
        let grid = z.grid();
        let n = grid.len();
        let c: Vec<f64> = (0..n).map(|i| (self.coeffs.sigma_x)(grid.node(i), z.value(i))).collect();
        (0..n).map(|l| table.integrate(&c, 0, n - 1, l)).collect()
    }

    /// Inverse of `Γ(t)` by the iteration `d ← −h_t[ω + ∫d]`, where
    /// `h_t[ω']` is the shift density built from `z` solved along `ω'`.
    ///
    /// Fails with [`Error::HorizonExceeded`] when successive differences stop
    /// shrinking (twice in a row), become non-finite, or the iteration budget
    /// runs out.
    pub fn invert_gamma(&self, eta: f64, driver: &SampledPath, t: f64) -> Result<InversionReport> {
        let i = driver.grid().index_of(t)?;
        if i == 0 {
            return Err(Error::domain("inversion time must be positive"));
        }
        let base = driver.prefix(i)?;
        let grid = *base.grid();
        let table = self.kernel.cell_table(&grid);
        let dt = grid.dt();
        let mut density = vec![0.0; grid.len()];
        let mut warm: Option<Vec<f64>> = None;
        let mut differences = Vec::new();
        let mut last_ratio = f64::NAN;
        let mut growing = 0;
        let horizon = |ratio: f64, iterations: usize| Error::HorizonExceeded { time: t, ratio, iterations };

        for iter in 1..=self.inversion_max_iter {
            let shifted = shift_path(&base, &density)?;
            let z = match self.solve_z_from(eta, &shifted, warm.as_deref()) {
                Ok((z, _)) => z,
                // the shifted driver made the z equation blow up
                Err(Error::ContractionFailure { .. }) | Err(Error::NotConverged { .. }) if iter > 1 => {
                    return Err(horizon(if last_ratio.is_nan() { f64::INFINITY } else { last_ratio }, iter));
                }
                Err(e) => return Err(e),
            };
            let next: Vec<f64> = self.gamma_density_at_end(&z, &table).into_iter().map(|v| -v).collect();
            if next.iter().any(|v| !v.is_finite()) {
                return Err(horizon(f64::INFINITY, iter));
            }
            let diff_vec: Vec<f64> = next.iter().zip(&density).map(|(a, b)| a - b).collect();
            let diff = hp_norm(&diff_vec, dt, self.p);
            if let Some(&prev) = differences.last() {
                last_ratio = if prev > 0.0 { diff / prev } else { 0.0 };
                if last_ratio >= 1.0 {
                    growing += 1;
                    if growing >= 2 {
                        return Err(horizon(last_ratio, iter));
                    }
                } else {
                    growing = 0;
                }
            }
            differences.push(diff);
            density = next;
            warm = Some(z.into_values());
            if diff < self.inversion_tol {
                let shifted = shift_path(&base, &density)?;
                let (z_shifted, _) = self.solve_z_from(eta, &shifted, warm.as_deref())?;
                let check = self.gamma_density_at_end(&z_shifted, &table);
                let resid: Vec<f64> = density.iter().zip(&check).map(|(d, h)| d + h).collect();
                let identity_residual =
                    trapezoid_cumulative(&resid, dt).iter().fold(0.0_f64, |m, v| m.max(v.abs()));
                return Ok(InversionReport {
                    lambda: ShiftMap { base_time: t, density: SampledPath::new(grid, density)? },
                    iterations: iter,
                    differences,
                    identity_residual,
                    z_shifted,
                });
            }
        }
        Err(horizon(last_ratio, self.inversion_max_iter))
    }

    /// `x(t) = z(t, Λ(t))` at each requested time. Stops at the first time
    /// whose inversion fails and reports it in [`Composition::horizon`].
    pub fn compose_solution(&self, eta: f64, driver: &SampledPath, out_times: &[f64]) -> Result<Composition> {
        for &t in out_times {
            driver.grid().index_of(t)?;
        }
        let run = |&t: &f64| -> Result<f64> {
            if t == 0.0 {
                return Ok(eta);
            }
            let rep = self.invert_gamma(eta, driver, t)?;
            Ok(rep.z_shifted.last())
        };
        #[cfg(feature = "parallel")]
        let results: Vec<Result<f64>> = out_times.par_iter().map(run).collect();
        #[cfg(not(feature = "parallel"))]
        let results: Vec<Result<f64>> = out_times.iter().map(run).collect();

        let mut times = Vec::new();
        let mut values = Vec::new();
        let mut horizon = None;
        for (&t, r) in out_times.iter().zip(results) {
            match r {
                Ok(v) => {
                    times.push(t);
                    values.push(v);
                }
                Err(Error::HorizonExceeded { time, ratio, iterations }) => {
                    horizon = Some(HorizonEvent { time, ratio, iterations });
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        Ok(Composition { times, values, horizon, theoretical_horizon: self.theoretical_horizon(driver) })
    }

    /// `1/(2 c_R)` with `c_R = sup|σ_x|·sup|σ_xx|·(1 + ‖B‖_{β})·2H·T^{2H−1}`: a
    /// rough a priori scale for the invertibility horizon. Infinite when `σ`
    /// is affine in `x`.
    pub fn theoretical_horizon(&self, driver: &SampledPath) -> f64 {
        let h = self.kernel.hurst();
        let horizon = driver.grid().horizon();
        let norm = holder_seminorm(driver.values(), 1, driver.grid().dt(), self.beta.value());
        let c = self.coeffs.sigma_lipschitz * self.coeffs.second_order * (1.0 + norm) * 2.0 * h * horizon.powf(2.0 * h - 1.0);
        if c > 0.0 {
            1.0 / (2.0 * c)
        } else {
            f64::INFINITY
        }
    }
}

/// `ω + ∫_0^· density`.
pub(crate) fn shift_path(base: &SampledPath, density: &[f64]) -> Result<SampledPath> {
    let shift = trapezoid_cumulative(density, base.grid().dt());
    SampledPath::new(*base.grid(), base.values().iter().zip(&shift).map(|(a, b)| a + b).collect())
}

/// Checks `∫ f δ(B + ∫h) = ∫ f δB + ∫ f(s) h(s) ds` for a deterministic `f`
/// (midpoint sums on both sides) and returns the largest gap between the
/// running integrals.
pub fn shift_lemma_check(f: &SampledPath, gamma: &ShiftMap, driver: &SampledPath) -> Result<f64> {
    let grid = driver.grid();
    if f.grid() != grid || gamma.density.grid() != grid {
        return Err(Error::domain("integrand, shift and driver must share the same grid"));
    }
    let dt = grid.dt();
    let shifted = shift_path(driver, gamma.density.values())?;
    let fv = f.values();
    let h = gamma.density.values();
    let mut lhs = 0.0;
    let mut rhs = 0.0;
    let mut worst: f64 = 0.0;
    for k in 0..fv.len() - 1 {
        let fm = 0.5 * (fv[k] + fv[k + 1]);
        lhs += fm * (shifted.value(k + 1) - shifted.value(k));
        rhs += fm * (driver.value(k + 1) - driver.value(k)) + 0.5 * dt * (fv[k] * h[k] + fv[k + 1] * h[k + 1]);
        worst = worst.max((lhs - rhs).abs());
    }
    Ok(worst)
}

/// The map whose fixed point is `z`; midpoint sums in `δB`, trapezoid in
/// time, and product integration of the kernel against `σ_x(u, z(u))`.
struct ZMap<'a> {
    coeffs: &'a CoefficientSet,
    eta: f64,
    driver: &'a [f64],
    nodes: Vec<f64>,
    dt: f64,
    table: &'a CellTable,
    /// Caches trusted for nodes `<= valid`.
    valid: usize,
    acc: Vec<f64>,
    psi: Vec<f64>,
    sig: Vec<f64>,
    /// `σ_x(u, z(u))`: frozen prefix plus the current window.
    sx: Vec<f64>,
    drift: Vec<f64>,
}

impl<'a> ZMap<'a> {
    fn new(coeffs: &'a CoefficientSet, eta: f64, driver: &'a [f64], grid: &TimeGrid, table: &'a CellTable) -> Self {
        let n = grid.len();
        Self {
            coeffs,
            eta,
            driver,
            nodes: grid.nodes(),
            dt: grid.dt(),
            table,
            valid: 0,
            acc: vec![0.0; n],
            psi: vec![0.0; n],
            sig: vec![0.0; n],
            sx: vec![0.0; n],
            drift: vec![0.0; n],
        }
    }

    fn fill_node(&mut self, x: &[f64], i: usize) {
        let (t, z) = (self.nodes[i], x[i]);
        self.sig[i] = (self.coeffs.sigma)(t, z);
        self.sx[i] = (self.coeffs.sigma_x)(t, z);
        self.drift[i] = (self.coeffs.b)(t, z);
    }

    /// `ψ_j = ∫_0^{s_j} σ_x(u, z(u)) φ(s_j, u) du`.
    fn psi_at(&self, j: usize) -> f64 {
        self.table.integrate(&self.sx, 0, j, j)
    }

    /// Increment of the three integrals over cell `k → k+1`.
    fn cell(&self, k: usize) -> f64 {
        let dt = self.dt;
        0.5 * dt * (self.drift[k] + self.drift[k + 1])
            + 0.5 * (self.sig[k] + self.sig[k + 1]) * (self.driver[k + 1] - self.driver[k])
            + 0.5 * dt * (self.sig[k] * self.psi[k] + self.sig[k + 1] * self.psi[k + 1])
    }
}

impl ProgressiveMap for ZMap<'_> {
    fn dim(&self) -> usize {
        1
    }

    fn initial_value(&self) -> Vec<f64> {
        vec![self.eta]
    }

    fn apply(&mut self, x: &[f64], from: usize, to: usize, out: &mut [f64]) {
        if from == 0 || self.valid > from {
            self.valid = 0;
            self.acc[0] = 0.0;
            self.fill_node(x, 0);
            self.psi[0] = 0.0;
        }
        while self.valid < from {
            let k = self.valid;
            self.fill_node(x, k + 1);
            self.psi[k + 1] = self.psi_at(k + 1);
            self.acc[k + 1] = self.acc[k] + self.cell(k);
            self.valid += 1;
        }
        for i in from + 1..=to {
            self.fill_node(x, i);
        }
        for i in from + 1..=to {
            self.psi[i] = self.psi_at(i);
        }
        let mut acc = self.acc[from];
        out[from] = self.eta + acc;
        for k in from..to {
            acc += self.cell(k);
            out[k + 1] = self.eta + acc;
        }
    }

    fn reset(&mut self) {
        self.valid = 0;
    }
}
