//! Pathwise (Young) integrals, the Wick–Itô integral obtained from them by a
//! Malliavin correction, and residual checks of the two Itô formulas.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::frac_calc::{weyl_left_offsets, FracOrder};
use crate::quad::{gamma, gauss_legendre_unit, pow_diff};
use crate::time_grid::{HolderExponent, Kernel, SampledPath, TimeGrid};

/// Where the integrand is sampled inside each grid cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EvalPoint {
    Left,
    /// Cell midpoint of the linear interpolant, i.e. the trapezoid rule.
    #[default]
    Mid,
    Right,
}

impl FromStr for EvalPoint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "left" => Ok(Self::Left),
            "mid" => Ok(Self::Mid),
            "right" => Ok(Self::Right),
            other => Err(Error::domain(format!("unknown evaluation point '{other}' (left|mid|right)"))),
        }
    }
}

/// The Malliavin derivative `𝔇_s f(t)` of an integrand.
#[derive(Clone, Default)]
pub enum MalliavinKernel {
    /// Deterministic integrand.
    #[default]
    Zero,
    /// `𝔇_s f(t) = factor(t)·1_{[0,t]}(s)`, with `factor` given at the grid
    /// nodes (`None` means 1). Covers every integrand of the form `F(B(t))`.
    Indicator { factor: Option<Vec<f64>> },
    /// Arbitrary kernel `(s, t) ↦ 𝔇_s f(t)`, integrated against `φ` as a
    /// piecewise-linear function of `s`.
    General(Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for MalliavinKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Zero => write!(f, "Zero"),
            Self::Indicator { factor } => f
                .debug_struct("Indicator")
                .field("factor", &factor.as_ref().map(|v| v.len()))
                .finish(),
            Self::General(_) => write!(f, "General(..)"),
        }
    }
}

/// An integrand sampled along the realised path, with its Malliavin
/// derivative and asserted Hölder regularity.
#[derive(Debug, Clone)]
pub struct IntegrandSpec {
    pub values: SampledPath,
    pub malliavin: Option<MalliavinKernel>,
    pub holder_beta: HolderExponent,
}

impl IntegrandSpec {
    /// Integrand with unknown Malliavin derivative; usable for pathwise
    /// integrals only.
    pub fn new(values: SampledPath, holder_beta: HolderExponent) -> Self {
        Self { values, malliavin: None, holder_beta }
    }

    /// Deterministic integrand (zero Malliavin derivative).
    pub fn deterministic(values: SampledPath, holder_beta: HolderExponent) -> Self {
        Self { values, malliavin: Some(MalliavinKernel::Zero), holder_beta }
    }

    pub fn with_malliavin(mut self, kernel: MalliavinKernel) -> Self {
        self.malliavin = Some(kernel);
        self
    }
}

fn same_grid(a: &TimeGrid, b: &TimeGrid) -> Result<()> {
    if a != b {
        return Err(Error::domain("integrand and integrator must share the same grid"));
    }
    Ok(())
}

fn window(grid: &TimeGrid, a: f64, b: f64) -> Result<(usize, usize)> {
    let i = grid.index_of(a)?;
    let j = grid.index_of(b)?;
    if i >= j {
        return Err(Error::domain(format!("integration window needs a < b, got [{a}, {b}]")));
    }
    Ok((i, j))
}

#[inline]
fn sample(f: &[f64], k: usize, eval: EvalPoint) -> f64 {
    match eval {
        EvalPoint::Left => f[k],
        EvalPoint::Mid => 0.5 * (f[k] + f[k + 1]),
        EvalPoint::Right => f[k + 1],
    }
}

/// Running Riemann sums `∫_{t_0}^{t_i} f dg` at every node.
pub(crate) fn riemann_cumulative(f: &[f64], g: &[f64], eval: EvalPoint) -> Vec<f64> {
    let mut out = Vec::with_capacity(f.len());
    let mut acc = 0.0;
    out.push(0.0);
    for k in 0..f.len() - 1 {
        acc += sample(f, k, eval) * (g[k + 1] - g[k]);
        out.push(acc);
    }
    out
}

/// Running trapezoid integrals `∫_0^{t_i} f ds`.
pub(crate) fn trapezoid_cumulative(f: &[f64], dt: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(f.len());
    let mut acc = 0.0;
    out.push(0.0);
    for k in 0..f.len() - 1 {
        acc += 0.5 * dt * (f[k] + f[k + 1]);
        out.push(acc);
    }
    out
}

/// Riemann–Stieltjes sum `Σ f(ξ_k)(g(t_{k+1}) − g(t_k))` over the grid cells
/// of `[a, b]`.
pub fn young_riemann(f: &IntegrandSpec, g: &SampledPath, a: f64, b: f64, eval: EvalPoint) -> Result<f64> {
    same_grid(f.values.grid(), g.grid())?;
    let (i, j) = window(g.grid(), a, b)?;
    let fv = f.values.values();
    let gv = g.values();
    Ok((i..j).map(|k| sample(fv, k, eval) * (gv[k + 1] - gv[k])).sum())
}

/// Admissible fractional order for a pair of Hölder exponents: the centre of
/// `(1 − μ, λ)` clipped away from both ends by `0.01`.
pub fn default_frac_order(lambda: f64, mu: f64) -> Result<FracOrder> {
    const EPS: f64 = 0.01;
    let lo = 1.0 - mu + EPS;
    let hi = lambda - EPS;
    if lo >= hi {
        return Err(Error::domain(format!(
            "Hölder exponents {lambda} and {mu} leave no room for a fractional order (need λ + μ > 1)"
        )));
    }
    FracOrder::new((0.5 * (1.0 - mu + lambda)).clamp(lo, hi))
}

/// Young integral through fractional derivatives,
/// `∫_a^b f dg = −∫_a^b D^α_{a+} f(t) · D^{1−α}_{b−} g_{b−}(t) dt`,
/// where `g_{b−} = g − g(b)` and the right derivative is taken in real form.
///
/// The integrand is evaluated with an 8-point Gauss rule per cell after a
/// change of variables that removes the weak singularities at the nodes.
pub fn young_fractional(
    f: &IntegrandSpec,
    g: &SampledPath,
    g_beta: HolderExponent,
    a: f64,
    b: f64,
    alpha: Option<FracOrder>,
) -> Result<f64> {
    same_grid(f.values.grid(), g.grid())?;
    let (i0, i1) = window(g.grid(), a, b)?;
    let lambda = f.holder_beta.value();
    let mu = g_beta.value();
    let alpha = match alpha {
        Some(al) => {
            let v = al.value();
            if !(v > 1.0 - mu && v < lambda) {
                return Err(Error::domain(format!(
                    "fractional order {v} outside the admissible window ({}, {lambda})",
                    1.0 - mu
                )));
            }
            al
        }
        None => default_frac_order(lambda, mu)?,
    }
    .value();

    let dt = g.grid().dt();
    let fx = &f.values.values()[i0..=i1];
    let gb = g.value(i1);
    let rev: Vec<f64> = g.values()[i0..=i1].iter().rev().map(|v| v - gb).collect();
    let m = fx.len() - 1;
    let beta_r = 1.0 - alpha;

    // Piecewise-linear inputs give kinks of type θ^{1−α} and (1−θ)^α at
    // every node; a quintic smoothstep change of variables flattens both.
    let (gx, gw) = gauss_legendre_unit(8);
    let theta: Vec<f64> = gx.iter().map(|&x| smoothstep(x)).collect();
    let jac: Vec<f64> = gx.iter().zip(&gw).map(|(&x, &w)| w * smoothstep_deriv(x)).collect();
    let q = theta.len();
    let mut total = 0.0;
    for k in 0..q {
        let left = weyl_left_offsets(fx, dt, alpha, theta[k]);
        // t_i + θ dt sits at offset 1 − θ of reflected cell m−1−i, and the
        // mapped nodes are symmetric, so that offset is node q−1−k
        let right = weyl_left_offsets(&rev, dt, beta_r, theta[q - 1 - k]);
        let mut acc = 0.0;
        for i in 1..m {
            acc += left[i] * right[m - 1 - i];
        }
        total += jac[k] * acc;
    }
    // first cell: additionally θ = s(x)^p with p = 1/(1−α) absorbs the
    // (t − a)^{−α} endpoint singularity
    let left_scale = dt.powf(-alpha) / gamma(1.0 - alpha);
    let right_scale = dt.powf(-beta_r) / gamma(1.0 - beta_r);
    let p = 1.0 / (1.0 - alpha);
    let mut first = 0.0;
    for (&x, &w) in gx.iter().zip(&gw) {
        let s = smoothstep(x);
        let th = s.powf(p);
        let jac = p * s.powf(p - 1.0) * smoothstep_deriv(x);
        let l = left_scale * weyl_left_point(fx, alpha, 0, th);
        let r = right_scale * weyl_left_point(&rev, beta_r, m - 1, 1.0 - th);
        first += w * jac * l * r;
    }
    Ok(-dt * (total + first))
}

fn smoothstep(x: f64) -> f64 {
    x * x * x * (10.0 + x * (-15.0 + 6.0 * x))
}

fn smoothstep_deriv(x: f64) -> f64 {
    30.0 * x * x * (1.0 - x) * (1.0 - x)
}

/// Unscaled left Weyl derivative of the interpolant of `x` at `t_i + θ dt`
/// (multiply by `dt^{−α}/Γ(1−α)`).
fn weyl_left_point(x: &[f64], alpha: f64, i: usize, theta: f64) -> f64 {
    let c = alpha / (1.0 - alpha);
    let slope = x[i + 1] - x[i];
    let ft = x[i] + theta * slope;
    let mut acc = ft * (i as f64 + theta).powf(-alpha) + c * slope * theta.powf(1.0 - alpha);
    for j in 0..i {
        let hi = (i - j) as f64 + theta;
        let lo = hi - 1.0;
        let pk = -pow_diff(-alpha, hi, lo);
        let qk = pow_diff(1.0 - alpha, hi, lo);
        acc += (ft - x[j]) * pk - (x[j + 1] - x[j]) * (hi * pk - c * qk);
    }
    acc
}

/// `𝔇^φ_t f(t) = ∫_0^T φ(t, s) 𝔇_s f(t) ds` at every grid node.
pub fn malliavin_trace(f: &IntegrandSpec, kernel: &Kernel) -> Result<Vec<f64>> {
    let grid = f.values.grid();
    let mk = f.malliavin.as_ref().ok_or_else(|| {
        Error::domain("the Itô integral needs the integrand's Malliavin derivative; none was supplied")
    })?;
    let h = kernel.hurst();
    let n = grid.len();
    Ok(match mk {
        MalliavinKernel::Zero => vec![0.0; n],
        MalliavinKernel::Indicator { factor } => {
            check_factor(factor, n)?;
            (0..n)
                .map(|i| {
                    let t = grid.node(i);
                    let c = factor.as_ref().map_or(1.0, |v| v[i]);
                    c * h * t.powf(2.0 * h - 1.0)
                })
                .collect()
        }
        MalliavinKernel::General(ev) => {
            let table = kernel.cell_table(grid);
            let nodes = grid.nodes();
            let mut out = Vec::with_capacity(n);
            let mut section = vec![0.0; n];
            for (i, &t) in nodes.iter().enumerate() {
                for (slot, &s) in section.iter_mut().zip(&nodes) {
                    *slot = ev(s, t);
                }
                out.push(table.integrate(&section, 0, n - 1, i));
            }
            out
        }
    })
}

fn check_factor(factor: &Option<Vec<f64>>, n: usize) -> Result<()> {
    match factor {
        Some(v) if v.len() != n => Err(Error::domain(format!(
            "Malliavin factor has {} entries, grid has {n} nodes",
            v.len()
        ))),
        _ => Ok(()),
    }
}

/// `∫_a^b 𝔇^φ_t f(t) dt`. Indicator kernels are integrated exactly against
/// `H t^{2H−1}`; general kernels use the trapezoid rule on the node trace.
fn malliavin_correction(f: &IntegrandSpec, kernel: &Kernel, i0: usize, i1: usize) -> Result<f64> {
    let grid = f.values.grid();
    match f.malliavin.as_ref() {
        Some(MalliavinKernel::Indicator { factor }) => {
            check_factor(factor, grid.len())?;
            let h = kernel.hurst();
            let e = 2.0 * h;
            let mut acc = 0.0;
            for k in i0..i1 {
                let (s0, s1) = (grid.node(k), grid.node(k + 1));
                // ∫ H t^{2H−1} and ∫ (t − s0) H t^{2H−1} over the cell
                let m0 = 0.5 * pow_diff(e, s1, s0);
                let m1 = h * pow_diff(e + 1.0, s1, s0) / (e + 1.0) - s0 * m0;
                let (c0, c1) = match factor {
                    Some(v) => (v[k], v[k + 1]),
                    None => (1.0, 1.0),
                };
                acc += c0 * m0 + (c1 - c0) * m1 / grid.dt();
            }
            Ok(acc)
        }
        _ => {
            let trace = malliavin_trace(f, kernel)?;
            let dt = grid.dt();
            Ok((i0..i1).map(|k| 0.5 * dt * (trace[k] + trace[k + 1])).sum())
        }
    }
}

/// Wick–Itô integral: the pathwise integral (midpoint rule) minus
/// `∫_a^b 𝔇^φ_t f(t) dt`.
pub fn ito_integral(f: &IntegrandSpec, b_path: &SampledPath, kernel: &Kernel, a: f64, b: f64) -> Result<f64> {
    ito_integral_with(f, b_path, kernel, a, b, EvalPoint::Mid)
}

/// [`ito_integral`] with an explicit evaluation point for the pathwise part.
pub fn ito_integral_with(
    f: &IntegrandSpec,
    b_path: &SampledPath,
    kernel: &Kernel,
    a: f64,
    b: f64,
    eval: EvalPoint,
) -> Result<f64> {
    let (i0, i1) = window(b_path.grid(), a, b)?;
    if f.malliavin.is_none() {
        return Err(Error::domain(
            "the Itô integral needs the integrand's Malliavin derivative; none was supplied",
        ));
    }
    let pathwise = young_riemann(f, b_path, a, b, eval)?;
    Ok(pathwise - malliavin_correction(f, kernel, i0, i1)?)
}

type ScalarFn = Box<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// A function `F(t, x)` together with `∂_t F`, `∂_x F` and `∂_xx F`.
pub struct SmoothFunction {
    pub value: ScalarFn,
    pub dt: ScalarFn,
    pub dx: ScalarFn,
    pub dxx: ScalarFn,
}

impl SmoothFunction {
    pub fn new(
        value: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        dt: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        dx: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        dxx: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self { value: Box::new(value), dt: Box::new(dt), dx: Box::new(dx), dxx: Box::new(dxx) }
    }

    /// `F(t, x) = x`.
    pub fn identity() -> Self {
        Self::new(|_, x| x, |_, _| 0.0, |_, _| 1.0, |_, _| 0.0)
    }

    /// `F(t, x) = x²/2`.
    pub fn half_square() -> Self {
        Self::new(|_, x| 0.5 * x * x, |_, _| 0.0, |_, x| x, |_, _| 1.0)
    }
}

impl fmt::Debug for SmoothFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SmoothFunction(..)")
    }
}

/// Pathwise Itô formula check for `η(t) = η0 + ∫_0^t g ds + ∫_0^t f δB`:
/// returns `max_t |F(t, η(t)) − F(0, η0) − ∫(∂_t F + ∂_x F·g) ds − ∫ ∂_x F·f δB|`.
///
/// `η` and the right-hand side are built with the same quadrature (trapezoid
/// in `ds`, `eval` in `δB`), so the residual measures the discretisation
/// error of the chain rule alone.
pub fn check_pathwise_ito_formula(
    func: &SmoothFunction,
    eta0: f64,
    f: &IntegrandSpec,
    g: &SampledPath,
    b_path: &SampledPath,
    eval: EvalPoint,
) -> Result<f64> {
    same_grid(f.values.grid(), b_path.grid())?;
    same_grid(g.grid(), b_path.grid())?;
    let grid = b_path.grid();
    let dt = grid.dt();
    let drift = trapezoid_cumulative(g.values(), dt);
    let noise = riemann_cumulative(f.values.values(), b_path.values(), eval);
    let eta: Vec<f64> = drift.iter().zip(&noise).map(|(d, s)| eta0 + d + s).collect();
    Ok(chain_rule_residual(func, grid, &eta, g.values(), |fx| {
        riemann_cumulative(&fx.iter().zip(f.values.values()).map(|(a, b)| a * b).collect::<Vec<_>>(), b_path.values(), eval)
    }))
}

fn chain_rule_residual(
    func: &SmoothFunction,
    grid: &TimeGrid,
    eta: &[f64],
    drift: &[f64],
    stochastic: impl FnOnce(&[f64]) -> Vec<f64>,
) -> f64 {
    let nodes = grid.nodes();
    let fx: Vec<f64> = nodes.iter().zip(eta).map(|(&t, &x)| (func.dx)(t, x)).collect();
    let ds: Vec<f64> = nodes
        .iter()
        .zip(eta)
        .zip(drift)
        .map(|((&t, &x), &g)| (func.dt)(t, x) + (func.dx)(t, x) * g)
        .collect();
    let det = trapezoid_cumulative(&ds, grid.dt());
    let sto = stochastic(&fx);
    let f0 = (func.value)(0.0, eta[0]);
    nodes
        .iter()
        .enumerate()
        .map(|(i, &t)| ((func.value)(t, eta[i]) - f0 - det[i] - sto[i]).abs())
        .fold(0.0, f64::max)
}

/// Itô–Itô formula check for `η(t) = η0 + ∫_0^t g ds + ∫_0^t f dB` (Itô
/// integral): compares `F(t, η(t))` with
/// `F(0, η0) + ∫(∂_t F + ∂_x F·g) ds + ∫ ∂_x F·f dB + ∫ ∂_xx F·f·𝔇^φ_s η(s) ds`.
///
/// `eta_dphi` holds `𝔇^φ_s η(s)` at the nodes. The Itô integral of
/// `∂_x F(s, η(s)) f(s)` uses the chain-rule trace
/// `∂_xx F·f·𝔇^φη + ∂_x F·𝔇^φ f`.
pub fn check_ito_ito_formula(
    func: &SmoothFunction,
    eta0: f64,
    f: &IntegrandSpec,
    g: &SampledPath,
    b_path: &SampledPath,
    kernel: &Kernel,
    eta_dphi: Option<&SampledPath>,
) -> Result<f64> {
    let eta_dphi = eta_dphi.ok_or_else(|| {
        Error::domain("the Itô–Itô formula needs 𝔇^φ_s η(s) along the solution; none was supplied")
    })?;
    same_grid(f.values.grid(), b_path.grid())?;
    same_grid(g.grid(), b_path.grid())?;
    same_grid(eta_dphi.grid(), b_path.grid())?;
    let grid = b_path.grid();
    let dt = grid.dt();
    let f_trace = malliavin_trace(f, kernel)?;
    let fv = f.values.values();

    let drift = trapezoid_cumulative(g.values(), dt);
    let pathwise = riemann_cumulative(fv, b_path.values(), EvalPoint::Mid);
    let corr = trapezoid_cumulative(&f_trace, dt);
    let eta: Vec<f64> = (0..grid.len()).map(|i| eta0 + drift[i] + pathwise[i] - corr[i]).collect();

    let nodes = grid.nodes();
    let fxx: Vec<f64> = nodes.iter().zip(&eta).map(|(&t, &x)| (func.dxx)(t, x)).collect();
    let second: Vec<f64> = (0..grid.len()).map(|i| fxx[i] * fv[i] * eta_dphi.value(i)).collect();
    Ok(chain_rule_residual(func, grid, &eta, g.values(), |fx| {
        let integrand: Vec<f64> = fx.iter().zip(fv).map(|(a, b)| a * b).collect();
        let path = riemann_cumulative(&integrand, b_path.values(), EvalPoint::Mid);
        let trace: Vec<f64> = (0..fx.len()).map(|i| second[i] + fx[i] * f_trace[i]).collect();
        let ito_corr = trapezoid_cumulative(&trace, dt);
        let extra = trapezoid_cumulative(&second, dt);
        (0..fx.len()).map(|i| path[i] - ito_corr[i] + extra[i]).collect()
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fbm::{sample_fbm, FbmConfig};

    fn beta(v: f64) -> HolderExponent {
        HolderExponent::new(v).unwrap()
    }

    fn fbm(n: usize, seed: u64) -> SampledPath {
        let grid = TimeGrid::new(1.0, n).unwrap();
        sample_fbm(&FbmConfig::new(0.75, grid, seed).unwrap()).unwrap()
    }

    #[test]
    fn constant_integrand_telescopes() {
        let b = fbm(256, 3);
        let one = IntegrandSpec::deterministic(SampledPath::constant(*b.grid(), 1.0), beta(0.99));
        for eval in [EvalPoint::Left, EvalPoint::Mid, EvalPoint::Right] {
            let v = young_riemann(&one, &b, 0.25, 1.0, eval).unwrap();
            assert!((v - (b.last() - b.at(0.25))).abs() < 1e-14);
        }
        let v = young_fractional(&one, &b, beta(0.65), 0.0, 1.0, None).unwrap();
        assert!((v - b.last()).abs() < 1e-3 * b.last().abs().max(1.0), "{v} vs {}", b.last());
    }

    #[test]
    fn midpoint_rule_telescopes_for_b_db() {
        let b = fbm(512, 11);
        let f = IntegrandSpec::new(b.clone(), beta(0.65));
        let v = young_riemann(&f, &b, 0.0, 1.0, EvalPoint::Mid).unwrap();
        assert!((v - 0.5 * b.last() * b.last()).abs() < 1e-12);
    }

    #[test]
    fn riemann_is_additive() {
        let b = fbm(128, 5);
        let f = IntegrandSpec::new(b.map(|_, x| x.sin()).unwrap(), beta(0.65));
        let whole = young_riemann(&f, &b, 0.0, 1.0, EvalPoint::Left).unwrap();
        let parts = young_riemann(&f, &b, 0.0, 0.5, EvalPoint::Left).unwrap()
            + young_riemann(&f, &b, 0.5, 1.0, EvalPoint::Left).unwrap();
        assert!((whole - parts).abs() < 1e-14);
    }

    #[test]
    fn fractional_smooth_identity() {
        let grid = TimeGrid::new(1.0, 128).unwrap();
        let t = SampledPath::from_fn(grid, |t| t).unwrap();
        let f = IntegrandSpec::deterministic(t.clone(), beta(1.0));
        let v = young_fractional(&f, &t, beta(1.0), 0.0, 1.0, None).unwrap();
        assert!((v - 0.5).abs() < 1e-6, "{v}");
    }

    #[test]
    fn fractional_order_window_is_enforced() {
        let b = fbm(64, 1);
        let f = IntegrandSpec::new(b.clone(), beta(0.6));
        let bad = FracOrder::new(0.3).unwrap();
        assert!(matches!(young_fractional(&f, &b, beta(0.6), 0.0, 1.0, Some(bad)), Err(Error::Domain(_))));
        let f = IntegrandSpec::new(b.clone(), beta(0.4));
        assert!(young_fractional(&f, &b, beta(0.55), 0.0, 1.0, None).is_err());
        let al = default_frac_order(0.65, 0.65).unwrap().value();
        assert!((al - 0.5).abs() < 1e-15);
    }

    #[test]
    fn fractional_matches_midpoint_sum_on_fbm() {
        let b = fbm(512, 21);
        let f = IntegrandSpec::new(b.clone(), beta(0.65));
        let frac = young_fractional(&f, &b, beta(0.65), 0.0, 1.0, None).unwrap();
        let mid = young_riemann(&f, &b, 0.0, 1.0, EvalPoint::Mid).unwrap();
        assert!((frac - mid).abs() < 1e-2 * mid.abs().max(0.1), "{frac} vs {mid}");
    }

    #[test]
    fn fractional_on_subinterval() {
        let grid = TimeGrid::new(1.0, 200).unwrap();
        let f = SampledPath::from_fn(grid, |t| t * t).unwrap();
        let g = SampledPath::from_fn(grid, |t| t.sin()).unwrap();
        let spec = IntegrandSpec::deterministic(f, beta(1.0));
        let v = young_fractional(&spec, &g, beta(1.0), 0.25, 0.75, None).unwrap();
        // ∫ t² cos t dt = (t² − 2) sin t + 2t cos t
        let anti = |t: f64| (t * t - 2.0) * t.sin() + 2.0 * t * t.cos();
        assert!((v - (anti(0.75) - anti(0.25))).abs() < 1e-4, "{v}");
    }

    #[test]
    fn ito_needs_malliavin_data() {
        let b = fbm(64, 2);
        let k = Kernel::new(0.75).unwrap();
        let f = IntegrandSpec::new(b.clone(), beta(0.65));
        assert!(matches!(ito_integral(&f, &b, &k, 0.0, 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn ito_of_deterministic_equals_pathwise() {
        let b = fbm(64, 2);
        let k = Kernel::new(0.75).unwrap();
        let f = IntegrandSpec::deterministic(SampledPath::from_fn(*b.grid(), |t| t.cos()).unwrap(), beta(1.0));
        let ito = ito_integral(&f, &b, &k, 0.0, 1.0).unwrap();
        let pw = young_riemann(&f, &b, 0.0, 1.0, EvalPoint::Mid).unwrap();
        assert_eq!(ito, pw);
    }

    #[test]
    fn ito_of_b_removes_half_variance() {
        let b = fbm(256, 9);
        let k = Kernel::new(0.75).unwrap();
        let f = IntegrandSpec::new(b.clone(), beta(0.65)).with_malliavin(MalliavinKernel::Indicator { factor: None });
        let v = ito_integral(&f, &b, &k, 0.0, 1.0).unwrap();
        assert!((v - (0.5 * b.last().powi(2) - 0.5)).abs() < 1e-12);
        let v = ito_integral(&f, &b, &k, 0.25, 0.75).unwrap();
        let want = 0.5 * (b.at(0.75).powi(2) - b.at(0.25).powi(2)) - 0.5 * (0.75f64.powf(1.5) - 0.25f64.powf(1.5));
        assert!((v - want).abs() < 1e-12);
    }

    #[test]
    fn general_kernel_is_exact_for_linear_sections() {
        let grid = TimeGrid::new(1.0, 64).unwrap();
        let k = Kernel::new(0.7).unwrap();
        let f = IntegrandSpec::new(SampledPath::zeros(grid), beta(0.6))
            .with_malliavin(MalliavinKernel::General(Arc::new(|s, t| (1.0 + t) * (2.0 - s))));
        let trace = malliavin_trace(&f, &k).unwrap();
        for i in [0usize, 17, 64] {
            let t = grid.node(i);
            let (w0, w1) = k.cell_weights(t, 0.0, 1.0);
            let want = (1.0 + t) * (2.0 * w0 + w1);
            assert!((trace[i] - want).abs() < 1e-12, "i={i}: {} vs {want}", trace[i]);
        }
    }

    #[test]
    fn general_indicator_kernel_converges_to_closed_form() {
        // the jump at s = t is smeared over one cell, so the error is O(dt^{2H−1})
        let k = Kernel::new(0.75).unwrap();
        let mut errs = Vec::new();
        for n in [64usize, 256] {
            let grid = TimeGrid::new(1.0, n).unwrap();
            let f = IntegrandSpec::new(SampledPath::zeros(grid), beta(0.6))
                .with_malliavin(MalliavinKernel::General(Arc::new(|s, t| if s <= t { 1.0 } else { 0.0 })));
            let trace = malliavin_trace(&f, &k).unwrap();
            errs.push((trace[n / 2] - 0.75 * 0.5f64.sqrt()).abs());
        }
        assert!(errs[1] < 0.6 * errs[0], "{errs:?}");
    }

    #[test]
    fn pathwise_formula_cases() {
        let b = fbm(512, 8);
        let grid = *b.grid();
        let zero = SampledPath::zeros(grid);
        let one = IntegrandSpec::deterministic(SampledPath::constant(grid, 1.0), beta(1.0));
        let r = check_pathwise_ito_formula(&SmoothFunction::identity(), 0.3, &one, &zero, &b, EvalPoint::Left).unwrap();
        assert!(r < 1e-13);

        let r = check_pathwise_ito_formula(&SmoothFunction::half_square(), 0.0, &one, &zero, &b, EvalPoint::Mid).unwrap();
        assert!(r < 1e-12);

        // F(t, x) = t x along η(t) = t
        let tx = SmoothFunction::new(|t, x| t * x, |_, x| x, |t, _| t, |_, _| 0.0);
        let nothing = IntegrandSpec::deterministic(zero.clone(), beta(1.0));
        let r = check_pathwise_ito_formula(&tx, 0.0, &nothing, &SampledPath::constant(grid, 1.0), &b, EvalPoint::Left)
            .unwrap();
        assert!(r < 1e-10, "{r}");
    }

    #[test]
    fn ito_formula_square_and_geometric() {
        let k = Kernel::new(0.75).unwrap();
        let b = fbm(1024, 13);
        let grid = *b.grid();
        let zero = SampledPath::zeros(grid);
        let one = IntegrandSpec::deterministic(SampledPath::constant(grid, 1.0), beta(1.0));
        let dphi = SampledPath::from_fn(grid, |t| 0.75 * t.sqrt()).unwrap();
        let sq = SmoothFunction::new(|_, x| x * x, |_, _| 0.0, |_, x| 2.0 * x, |_, _| 2.0);
        let r = check_ito_ito_formula(&sq, 0.0, &one, &zero, &b, &k, Some(&dphi)).unwrap();
        assert!(r < 1e-12, "{r}");
        assert!(check_ito_ito_formula(&sq, 0.0, &one, &zero, &b, &k, None).is_err());

        let geo = SmoothFunction::new(
            |t, x| (x - 0.5 * t.powf(1.5)).exp(),
            |t, x| -0.75 * t.sqrt() * (x - 0.5 * t.powf(1.5)).exp(),
            |t, x| (x - 0.5 * t.powf(1.5)).exp(),
            |t, x| (x - 0.5 * t.powf(1.5)).exp(),
        );
        let bc = b.subsample(8).unwrap();
        let gc = *bc.grid();
        let one_c = IntegrandSpec::deterministic(SampledPath::constant(gc, 1.0), beta(1.0));
        let dphi_c = dphi.subsample(8).unwrap();
        let coarse = check_ito_ito_formula(&geo, 0.0, &one_c, &SampledPath::zeros(gc), &bc, &k, Some(&dphi_c)).unwrap();
        let fine = check_ito_ito_formula(&geo, 0.0, &one, &zero, &b, &k, Some(&dphi)).unwrap();
        assert!(fine < coarse, "{fine} vs {coarse}");
        assert!(fine < 1e-2, "{fine}");
    }
}
