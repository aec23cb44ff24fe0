//! Fixed points of progressive maps on path space by windowed Picard
//! iteration.
//!
//! The horizon is cut into sub-intervals short enough for the map to be a
//! ½-contraction in the combined sup + Hölder norm; each window is iterated
//! to convergence with everything before it frozen.

use std::fmt;

use crate::error::{Error, Result};
use crate::time_grid::{holder_seminorm, sup_abs, HolderExponent, TimeGrid};

/// A map `x ↦ F(·, x)` on node-major trajectories (`dim` values per node)
/// whose value at time `t` depends only on `x` on `[0, t]`.
pub trait ProgressiveMap {
    fn dim(&self) -> usize;

    /// `F(0, x)`, which does not depend on `x`.
    fn initial_value(&self) -> Vec<f64>;

    /// Writes `F(x)` at nodes `from..=to` into the matching slots of `out`.
    ///
    /// The engine guarantees that `x` at nodes before `from` is final, so
    /// implementations may cache quantities built from that prefix. Calling
    /// with `from = 0` must always be valid.
    fn apply(&mut self, x: &[f64], from: usize, to: usize, out: &mut [f64]);

    /// Drops any cached prefix state.
    fn reset(&mut self) {}
}

type KappaFn = Box<dyn Fn(f64, f64) -> f64 + Send + Sync>;
type BoundFn = Box<dyn Fn(f64, f64, f64, f64) -> f64 + Send + Sync>;

/// Constants of the contraction argument.
///
/// * `kappa` bounds the Hölder growth of `F` (optionally per interval via
///   `kappa_on`),
/// * `h_bound(m1, m2, m3, m4)` bounds the Lipschitz constant of `F` on a
///   window given sup and Hölder bounds of the two arguments,
/// * `gamma` is the power of the window length gained by `F`,
/// * `delta` caps the window length.
pub struct ContractionProblem {
    pub kappa: f64,
    pub kappa_on: Option<KappaFn>,
    pub gamma: f64,
    pub beta: HolderExponent,
    pub delta: f64,
    pub h_bound: BoundFn,
}

impl fmt::Debug for ContractionProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ContractionProblem")
            .field("kappa", &self.kappa)
            .field("gamma", &self.gamma)
            .field("beta", &self.beta)
            .field("delta", &self.delta)
            .finish_non_exhaustive()
    }
}

impl ContractionProblem {
    /// Problem whose Lipschitz bound is the constant `h`.
    pub fn new(kappa: f64, gamma: f64, beta: HolderExponent, delta: f64, h: f64) -> Result<Self> {
        Self::with_bound(kappa, gamma, beta, delta, move |_, _, _, _| h)
    }

    pub fn with_bound(
        kappa: f64,
        gamma: f64,
        beta: HolderExponent,
        delta: f64,
        h_bound: impl Fn(f64, f64, f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(Error::domain(format!("kappa must be positive and finite, got {kappa}")));
        }
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::domain(format!("gamma must lie in (0, 1], got {gamma}")));
        }
        if !(delta > 0.0) {
            return Err(Error::domain(format!("delta must be positive, got {delta}")));
        }
        Ok(Self { kappa, kappa_on: None, gamma, beta, delta, h_bound: Box::new(h_bound) })
    }

    pub fn with_kappa_on(mut self, f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.kappa_on = Some(Box::new(f));
        self
    }

    fn kappa_for(&self, a: f64, b: f64) -> f64 {
        self.kappa_on.as_ref().map_or(self.kappa, |k| k(a, b))
    }

    /// Largest admissible window for Lipschitz bound `m` and growth `kappa`.
    fn tau(&self, m: f64, kappa: f64) -> f64 {
        let g = -1.0 / self.gamma;
        (2.0 * m).powf(g).min((2.0 * kappa).powf(g)).min(self.delta)
    }
}

/// Outcome of [`solve_fixed_point`].
#[derive(Debug, Clone)]
pub struct PicardReport {
    pub grid: TimeGrid,
    pub dim: usize,
    /// Node-major fixed point.
    pub solution: Vec<f64>,
    /// `(T_k, τ_k)`: start and length of each window.
    pub sub_intervals: Vec<(f64, f64)>,
    pub iterations_per_interval: Vec<usize>,
    /// `max_t |x(t) − F(t, x)|` from a final full evaluation.
    pub residual: f64,
    /// `(c₁, c₂)` of [`growth_bound`].
    pub bound_constants: (f64, f64),
}

impl PicardReport {
    /// Values of component `c` at every node.
    pub fn component(&self, c: usize) -> Vec<f64> {
        self.solution.iter().skip(c).step_by(self.dim).copied().collect()
    }
}

/// A priori bounds on the fixed point from the window-doubling argument.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrowthBound {
    pub sup_bound: f64,
    /// Bound on the Hölder norm over any window of length `tau0`.
    pub holder_bound: f64,
    pub tau0: f64,
    /// Number of uniform windows, `floor(T/τ₀) + 1`.
    pub windows: u32,
    pub c1: f64,
    pub c2: f64,
}

/// Bounds `sup |x| ≤ 2^{N+1} + 2^N ‖F0‖` with `N = floor(T/τ₀) + 1` and
/// `τ₀ = (2κ)^{−1/γ} ∧ Δ`. The same quantity is dominated by
/// `c₂·exp(c₁ κ^{1/γ} T)(1 + ‖F0‖)` with `c₁ = 2^{1/γ} ln 2`,
/// `c₂ = 4·2^{T/Δ}`. The Hölder bound is `4κ(1 + sup_bound)`.
pub fn growth_bound(problem: &ContractionProblem, horizon: f64, f0_norm: f64) -> GrowthBound {
    let kappa = problem.kappa;
    let tau0 = (2.0 * kappa).powf(-1.0 / problem.gamma).min(problem.delta);
    let windows = (horizon / tau0).floor() as u32 + 1;
    let p = 2f64.powi(windows as i32);
    let sup_bound = 2.0 * p + p * f0_norm;
    GrowthBound {
        sup_bound,
        holder_bound: 4.0 * kappa * (1.0 + sup_bound),
        tau0,
        windows,
        c1: std::f64::consts::LN_2 * 2f64.powf(1.0 / problem.gamma),
        c2: 4.0 * 2f64.powf(horizon / problem.delta),
    }
}

const MAX_SHRINKS: usize = 30;
const FAILURE_STREAK: usize = 3;

/// Solves `x = F(x)` on `grid`, starting from the constant iterate `F0`.
pub fn solve_fixed_point(
    map: &mut dyn ProgressiveMap,
    problem: &ContractionProblem,
    grid: &TimeGrid,
    tol: f64,
    max_iter: usize,
) -> Result<PicardReport> {
    solve_fixed_point_from(map, problem, grid, tol, max_iter, None)
}

/// [`solve_fixed_point`] with an explicit initial iterate (node-major,
/// `dim·(N+1)` values). Its value at node 0 is replaced by `F0`.
pub fn solve_fixed_point_from(
    map: &mut dyn ProgressiveMap,
    problem: &ContractionProblem,
    grid: &TimeGrid,
    tol: f64,
    max_iter: usize,
    initial: Option<&[f64]>,
) -> Result<PicardReport> {
    if !(tol > 0.0) {
        return Err(Error::domain(format!("tolerance must be positive, got {tol}")));
    }
    if max_iter == 0 {
        return Err(Error::domain("max_iter must be at least 1"));
    }
    let dim = map.dim();
    let n = grid.n_steps();
    let len = dim * (n + 1);
    let f0 = map.initial_value();
    if f0.len() != dim {
        return Err(Error::domain("initial value has the wrong dimension"));
    }
    let mut x = match initial {
        Some(init) if init.len() == len => init.to_vec(),
        Some(_) => return Err(Error::domain("initial iterate has the wrong length")),
        None => f0.iter().copied().cycle().take(len).collect(),
    };
    x[..dim].copy_from_slice(&f0);
    map.reset();

    let dt = grid.dt();
    let beta = problem.beta.value();
    let f0_norm = sup_abs(&f0, dim);
    let mut out = x.clone();
    let mut sub_intervals = Vec::new();
    let mut iterations = Vec::new();
    let mut prev_holder = None;
    let mut start = 0usize;

    while start < n {
        let a = grid.node(start);
        let kappa = problem.kappa_for(a, (a + problem.delta).min(grid.horizon()));
        let m_sup = sup_abs(&x[..(start + 1) * dim], dim);
        let m_hold = prev_holder.unwrap_or(kappa * (1.0 + f0_norm));
        let mut tau = problem.tau((problem.h_bound)(m_sup, m_sup, m_hold, m_hold), kappa);
        let saved = x[start * dim..].to_vec();
        let mut shrinks = 0;
        let (end, iters) = loop {
            if tau < dt {
                return Err(Error::Resolution { tau, dt });
            }
            let steps = ((tau / dt) * (1.0 + 1e-12)).floor().max(1.0) as usize;
            let end = (start + steps).min(n);
            // flat extension of the last frozen value as the first guess
            if initial.is_none() || shrinks > 0 {
                for i in start + 1..=end {
                    for c in 0..dim {
                        x[i * dim + c] = x[start * dim + c];
                    }
                }
            }
            let iters = iterate_window(map, &mut x, &mut out, dim, start, end, dt, beta, tol, max_iter, grid)?;
            let window = &x[start * dim..(end + 1) * dim];
            let sup_post = sup_abs(&x[..(end + 1) * dim], dim);
            let hold_post = holder_seminorm(window, dim, dt, beta);
            let m_post = (problem.h_bound)(sup_post, sup_post, hold_post, hold_post);
            let actual = (end - start) as f64 * dt;
            if m_post * actual.powf(problem.gamma) > 0.5 && shrinks < MAX_SHRINKS && steps > 1 {
                tau = problem.tau(m_post, kappa).min(0.5 * actual);
                x[start * dim..].copy_from_slice(&saved);
                map.reset();
                shrinks += 1;
                continue;
            }
            prev_holder = Some(hold_post);
            break (end, iters);
        };
        sub_intervals.push((grid.node(start), grid.node(end) - grid.node(start)));
        iterations.push(iters);
        start = end;
    }

    map.reset();
    map.apply(&x, 0, n, &mut out);
    let residual = x.iter().zip(&out).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
    let gb = growth_bound(problem, grid.horizon(), f0_norm);
    Ok(PicardReport {
        grid: *grid,
        dim,
        solution: x,
        sub_intervals,
        iterations_per_interval: iterations,
        residual,
        bound_constants: (gb.c1, gb.c2),
    })
}

#[allow(clippy::too_many_arguments)]
fn iterate_window(
    map: &mut dyn ProgressiveMap,
    x: &mut [f64],
    out: &mut [f64],
    dim: usize,
    start: usize,
    end: usize,
    dt: f64,
    beta: f64,
    tol: f64,
    max_iter: usize,
    grid: &TimeGrid,
) -> Result<usize> {
    let mut prev_diff = f64::INFINITY;
    let mut streak = 0;
    let mut diff_buf = vec![0.0; (end - start + 1) * dim];
    for iter in 1..=max_iter {
        map.apply(x, start, end, out);
        for (k, d) in diff_buf.iter_mut().enumerate() {
            let idx = start * dim + k;
            *d = if k < dim { 0.0 } else { out[idx] - x[idx] };
        }
        if diff_buf.iter().any(|v| !v.is_finite()) {
            return Err(Error::ContractionFailure {
                start: grid.node(start),
                end: grid.node(end),
                ratio: f64::INFINITY,
                streak: streak + 1,
            });
        }
        let diff = sup_abs(&diff_buf, dim) + holder_seminorm(&diff_buf, dim, dt, beta);
        x[(start + 1) * dim..(end + 1) * dim].copy_from_slice(&out[(start + 1) * dim..(end + 1) * dim]);
        if diff < tol {
            return Ok(iter);
        }
        let ratio = diff / prev_diff;
        if ratio >= 1.0 {
            streak += 1;
            if streak >= FAILURE_STREAK {
                return Err(Error::ContractionFailure {
                    start: grid.node(start),
                    end: grid.node(end),
                    ratio,
                    streak,
                });
            }
        } else {
            streak = 0;
        }
        prev_diff = diff;
        if iter == max_iter {
            return Err(Error::NotConverged {
                start: grid.node(start),
                end: grid.node(end),
                iterations: max_iter,
                diff,
            });
        }
    }
    unreachable!("loop returns on its last iteration")
}

/// `F(x)(t) = c + λ ∫_0^t x(s) ds` (trapezoid rule), a scalar test map.
#[derive(Debug, Clone)]
pub struct LinearOdeMap {
    pub start: f64,
    pub rate: f64,
    dt: f64,
    /// `∫_0^{t_i} x ds`, trusted for `i <= valid`.
    prefix: Vec<f64>,
    valid: usize,
}

impl LinearOdeMap {
    pub fn new(start: f64, rate: f64, grid: &TimeGrid) -> Self {
        Self { start, rate, dt: grid.dt(), prefix: vec![0.0; grid.len()], valid: 0 }
    }
}

impl ProgressiveMap for LinearOdeMap {
    fn dim(&self) -> usize {
        1
    }

    fn initial_value(&self) -> Vec<f64> {
        vec![self.start]
    }

    fn apply(&mut self, x: &[f64], from: usize, to: usize, out: &mut [f64]) {
        self.valid = self.valid.min(from);
        while self.valid < from {
            let i = self.valid;
            self.prefix[i + 1] = self.prefix[i] + 0.5 * self.dt * (x[i] + x[i + 1]);
            self.valid += 1;
        }
        let mut acc = self.prefix[from];
        out[from] = self.start + self.rate * acc;
        for i in from + 1..=to {
            acc += 0.5 * self.dt * (x[i - 1] + x[i]);
            out[i] = self.start + self.rate * acc;
        }
    }

    fn reset(&mut self) {
        self.valid = 0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn beta() -> HolderExponent {
        HolderExponent::new(0.6).unwrap()
    }

    #[test]
    fn exponential_fixed_point() {
        let grid = TimeGrid::new(1.0, 4096).unwrap();
        let problem = ContractionProblem::new(1.0, 1.0, beta(), 1.0, 1.0).unwrap();
        let mut map = LinearOdeMap::new(1.0, 1.0, &grid);
        let rep = solve_fixed_point(&mut map, &problem, &grid, 1e-10, 200).unwrap();
        assert!((rep.solution[4096] - std::f64::consts::E).abs() < 1e-5);
        assert!(rep.residual < 1e-9);
    }

    #[test]
    fn constant_map_converges_immediately() {
        struct Constant;
        impl ProgressiveMap for Constant {
            fn dim(&self) -> usize {
                2
            }
            fn initial_value(&self) -> Vec<f64> {
                vec![1.5, -2.0]
            }
            fn apply(&mut self, _x: &[f64], from: usize, to: usize, out: &mut [f64]) {
                for i in from..=to {
                    out[2 * i] = 1.5;
                    out[2 * i + 1] = -2.0;
                }
            }
        }
        let grid = TimeGrid::new(1.0, 64).unwrap();
        let problem = ContractionProblem::new(0.1, 1.0, beta(), 2.0, 0.0).unwrap();
        let rep = solve_fixed_point(&mut Constant, &problem, &grid, 1e-12, 5).unwrap();
        assert_eq!(rep.iterations_per_interval, vec![1]);
        assert_eq!(rep.component(1), vec![-2.0; 65]);
        assert_eq!(rep.residual, 0.0);
    }

    #[test]
    fn stiff_rate_forces_several_windows() {
        let grid = TimeGrid::new(1.0, 4096).unwrap();
        let problem = ContractionProblem::new(5.0, 1.0, beta(), 1.0, 5.0).unwrap();
        let mut map = LinearOdeMap::new(0.7, 5.0, &grid);
        let rep = solve_fixed_point(&mut map, &problem, &grid, 1e-11, 200).unwrap();
        let want = 0.7 * 5f64.exp();
        assert!(((rep.solution[4096] - want) / want).abs() < 1e-4);
        assert!(rep.sub_intervals.len() >= 10);
        for &(_, tau) in &rep.sub_intervals {
            assert!(tau > 0.0 && tau <= 0.1 + 1e-12);
        }
        let total: f64 = rep.sub_intervals.iter().map(|s| s.1).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn super_critical_problem_is_rejected() {
        let grid = TimeGrid::new(1.0, 512).unwrap();
        // declared constants understate the true rate 50
        let problem = ContractionProblem::new(0.1, 1.0, beta(), 1.0, 0.1).unwrap();
        let mut map = LinearOdeMap::new(1.0, 50.0, &grid);
        let err = solve_fixed_point(&mut map, &problem, &grid, 1e-10, 200).unwrap_err();
        assert!(matches!(err, Error::ContractionFailure { streak: 3, .. }), "{err}");
    }

    #[test]
    fn tiny_window_is_a_resolution_error() {
        let grid = TimeGrid::new(1.0, 16).unwrap();
        let problem = ContractionProblem::new(1000.0, 1.0, beta(), 1.0, 1000.0).unwrap();
        let mut map = LinearOdeMap::new(1.0, 1000.0, &grid);
        assert!(matches!(
            solve_fixed_point(&mut map, &problem, &grid, 1e-10, 50),
            Err(Error::Resolution { .. })
        ));
    }

    #[test]
    fn growth_bound_examples() {
        let p = ContractionProblem::new(1.0, 1.0, beta(), 1.0, 1.0).unwrap();
        let g = growth_bound(&p, 1.0, 0.0);
        assert_eq!(g.tau0, 0.5);
        assert_eq!(g.windows, 3);
        assert_eq!(g.sup_bound, 16.0);

        // negligible κ: a single window once Δ exceeds the horizon
        let p = ContractionProblem::new(1e-12, 1.0, beta(), 1.5, 1.0).unwrap();
        let g = growth_bound(&p, 1.0, 3.0);
        assert_eq!(g.windows, 1);
        assert_eq!(g.sup_bound, 4.0 + 2.0 * 3.0);

        let p = ContractionProblem::new(2.0, 1.0, beta(), 1.0, 1.0).unwrap();
        let a = growth_bound(&p, 1.0, 1.0);
        let b = growth_bound(&p, 2.0, 1.0);
        assert!(b.sup_bound > a.sup_bound);
        let dominated = a.c2 * (a.c1 * 2.0 * 1.0).exp() * 2.0;
        assert!(a.sup_bound <= dominated);
    }

    #[test]
    fn solution_respects_growth_bound() {
        let grid = TimeGrid::new(1.0, 1024).unwrap();
        for &(c, rate) in &[(1.0, 1.0), (0.3, 5.0), (-2.0, 2.0)] {
            let problem = ContractionProblem::new(rate, 1.0, beta(), 1.0, rate).unwrap();
            let mut map = LinearOdeMap::new(c, rate, &grid);
            let rep = solve_fixed_point(&mut map, &problem, &grid, 1e-10, 200).unwrap();
            let gb = growth_bound(&problem, 1.0, c.abs());
            let sup = sup_abs(&rep.solution, 1);
            assert!(sup <= gb.sup_bound);
            let w = (gb.tau0 / grid.dt()).floor() as usize;
            for s in (0..1024).step_by(w.max(1)) {
                let e = (s + w).min(1024);
                assert!(holder_seminorm(&rep.solution[s..=e], 1, grid.dt(), 0.6) <= gb.holder_bound);
            }
        }
    }

    #[test]
    fn fixed_point_is_unique() {
        let grid = TimeGrid::new(1.0, 512).unwrap();
        let problem = ContractionProblem::new(2.0, 1.0, beta(), 1.0, 2.0).unwrap();
        let mut map = LinearOdeMap::new(1.0, 2.0, &grid);
        let a = solve_fixed_point(&mut map, &problem, &grid, 1e-10, 200).unwrap();
        let shifted = vec![2.0; 513];
        let b = solve_fixed_point_from(&mut map, &problem, &grid, 1e-10, 200, Some(&shifted)).unwrap();
        let gap = a.solution.iter().zip(&b.solution).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()));
        assert!(gap < 2e-10, "{gap}");
    }
}
