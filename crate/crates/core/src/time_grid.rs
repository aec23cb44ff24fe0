//! Uniform time grids, sampled paths, path norms, and closed-form integrals
//! of the fBm covariance density `φ(u,v) = H(2H−1)|u−v|^{2H−2}`.

use std::io::{Read, Write};

use crate::error::{Error, Result};

/// Uniform grid `0 = t_0 < t_1 < ... < t_N = T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    n_steps: usize,
    dt: f64,
}

impl TimeGrid {
    pub fn new(horizon: f64, n_steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::domain(format!("horizon must be positive and finite, got {horizon}")));
        }
        if n_steps == 0 {
            return Err(Error::domain("grid needs at least one step"));
        }
        Ok(Self {
            horizon,
            n_steps,
            dt: horizon / n_steps as f64,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Number of nodes, `N + 1`.
    pub fn len(&self) -> usize {
        self.n_steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Time of node `i`; the last node is exactly the horizon.
    pub fn node(&self, i: usize) -> f64 {
        debug_assert!(i <= self.n_steps);
        if i >= self.n_steps {
            self.horizon
        } else {
            i as f64 * self.dt
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|i| self.node(i)).collect()
    }

    /// Index of a time that must lie on the grid.
    pub fn index_of(&self, t: f64) -> Result<usize> {
        let x = t / self.dt;
        let i = x.round();
        if !t.is_finite() || i < 0.0 || i > self.n_steps as f64 || (x - i).abs() > 1e-8 * x.abs().max(1.0) {
            return Err(Error::domain(format!(
                "time {t} is not a node of the grid (dt = {}, T = {})",
                self.dt, self.horizon
            )));
        }
        Ok(i as usize)
    }

    /// Grid with the same horizon and `n_steps / factor` steps.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || self.n_steps % factor != 0 {
            return Err(Error::domain(format!("cannot coarsen {} steps by {factor}", self.n_steps)));
        }
        TimeGrid::new(self.horizon, self.n_steps / factor)
    }

    /// Grid `[0, t_i]` made of the first `i` steps.
    pub fn prefix(&self, i: usize) -> Result<Self> {
        if i == 0 || i > self.n_steps {
            return Err(Error::domain(format!("prefix length {i} outside 1..={}", self.n_steps)));
        }
        Ok(Self {
            horizon: self.node(i),
            n_steps: i,
            dt: self.dt,
        })
    }
}

/// Values of a real function at the nodes of a [`TimeGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct SampledPath {
    grid: TimeGrid,
    values: Vec<f64>,
}

impl SampledPath {
    pub fn new(grid: TimeGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::domain(format!(
                "path has {} values but the grid has {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::domain(format!("path value at node {i} is not finite")));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: TimeGrid, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = (0..grid.len()).map(|i| f(grid.node(i))).collect();
        Self::new(grid, values)
    }

    pub fn zeros(grid: TimeGrid) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    pub fn constant(grid: TimeGrid, c: f64) -> Self {
        Self {
            grid,
            values: vec![c; grid.len()],
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn value(&self, i: usize) -> f64 {
        self.values[i]
    }

    pub fn last(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    /// Linear interpolation at an arbitrary time in `[0, T]`.
    pub fn at(&self, t: f64) -> f64 {
        let n = self.grid.n_steps;
        let x = (t / self.grid.dt).clamp(0.0, n as f64);
        let i = (x.floor() as usize).min(n - 1);
        let w = x - i as f64;
        self.values[i] * (1.0 - w) + self.values[i + 1] * w
    }

    /// Every `factor`-th node, i.e. the same function on a coarser grid.
    pub fn subsample(&self, factor: usize) -> Result<Self> {
        let grid = self.grid.coarsen(factor)?;
        let values = self.values.iter().step_by(factor).copied().collect();
        Ok(Self { grid, values })
    }

    /// Restriction to `[0, t_i]`.
    pub fn prefix(&self, i: usize) -> Result<Self> {
        let grid = self.grid.prefix(i)?;
        Ok(Self {
            grid,
            values: self.values[..=i].to_vec(),
        })
    }

    pub fn map(&self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(i, &v)| f(self.grid.node(i), v))
            .collect();
        Self::new(self.grid, values)
    }

    /// Writes `t,value` rows with 17 significant digits.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_csv_rows(out, &self.grid, &self.values)
    }

    /// Reads a path written by [`SampledPath::write_csv`]; the grid is
    /// reconstructed from the first and last time stamps.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let headers = reader.headers()?.clone();
        if headers.len() != 2 || &headers[0] != "t" || &headers[1] != "value" {
            return Err(Error::Parse(format!("expected header `t,value`, found `{}`", headers.iter().collect::<Vec<_>>().join(","))));
        }
        let mut times = Vec::new();
        let mut values = Vec::new();
        for (row, record) in reader.records().enumerate() {
            let record = record?;
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| Error::Parse(format!("row {}: cannot parse `{s}` as a number", row + 2)))
            };
            times.push(parse(&record[0])?);
            values.push(parse(&record[1])?);
        }
        if times.len() < 2 {
            return Err(Error::Parse("a path needs at least two rows".into()));
        }
        if times[0] != 0.0 {
            return Err(Error::Parse(format!("first time stamp must be 0, found {}", times[0])));
        }
        let grid = TimeGrid::new(times[times.len() - 1], times.len() - 1)
            .map_err(|e| Error::Parse(e.to_string()))?;
        for (i, &t) in times.iter().enumerate() {
            if (t - grid.node(i)).abs() > 1e-9 * grid.horizon().max(1.0) {
                return Err(Error::Parse(format!("time stamps are not uniform (row {})", i + 2)));
            }
        }
        SampledPath::new(grid, values).map_err(|e| Error::Parse(e.to_string()))
    }
}

pub(crate) fn write_csv_rows<W: Write>(out: W, grid: &TimeGrid, values: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "value"])?;
    for (i, v) in values.iter().enumerate() {
        w.write_record([fmt17(grid.node(i)), fmt17(*v)])?;
    }
    w.flush()?;
    Ok(())
}

/// Lossless decimal rendering of a double (17 significant digits).
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Hölder exponent of a path.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct HolderExponent(f64);

impl HolderExponent {
    /// Any exponent in `(0, 1]`.
    pub fn new(beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(Error::domain(format!("Hölder exponent must lie in (0, 1], got {beta}")));
        }
        Ok(Self(beta))
    }

    /// Exponent for an fBm driver: `1/2 < beta < H`.
    pub fn for_driver(beta: f64, hurst: f64) -> Result<Self> {
        if !(beta > 0.5 && beta < hurst) {
            return Err(Error::domain(format!(
                "driver Hölder exponent must satisfy 1/2 < beta < H = {hurst}, got {beta}"
            )));
        }
        Ok(Self(beta))
    }

    /// Midpoint of `(1/2, H)`.
    pub fn default_for(hurst: f64) -> Self {
        Self(0.5 * (0.5 + hurst))
    }

    pub fn value(&self) -> f64 {
        self.0
    }
}

fn check_window(grid: &TimeGrid, a: f64, b: f64) -> Result<(usize, usize)> {
    if !(a < b) {
        return Err(Error::domain(format!("norm window needs a < b, got [{a}, {b}]")));
    }
    Ok((grid.index_of(a)?, grid.index_of(b)?))
}

/// `‖x‖_{a,b,β} = max_{a≤s<t≤b} |x(t)−x(s)| / (t−s)^β` over all node pairs.
pub fn holder_norm(path: &SampledPath, a: f64, b: f64, beta: HolderExponent) -> Result<f64> {
    let (i, j) = check_window(path.grid(), a, b)?;
    Ok(holder_seminorm(&path.values()[i..=j], 1, path.grid().dt(), beta.value()))
}

/// Cheaper variant restricted to dyadic gaps `2^k·dt`. It is a lower bound
/// for [`holder_norm`] and usually within a few percent of it for rough paths.
pub fn holder_norm_dyadic(path: &SampledPath, a: f64, b: f64, beta: HolderExponent) -> Result<f64> {
    let (i, j) = check_window(path.grid(), a, b)?;
    let x = &path.values()[i..=j];
    let dt = path.grid().dt();
    let mut best: f64 = 0.0;
    let mut gap = 1;
    while gap < x.len() {
        let scale = (gap as f64 * dt).powf(-beta.value());
        for k in 0..x.len() - gap {
            best = best.max((x[k + gap] - x[k]).abs() * scale);
        }
        gap *= 2;
    }
    let full = x.len() - 1;
    best = best.max((x[full] - x[0]).abs() * (full as f64 * dt).powf(-beta.value()));
    Ok(best)
}

/// `max_{a≤t≤b} |x(t)|`.
pub fn sup_norm(path: &SampledPath, a: f64, b: f64) -> Result<f64> {
    let (i, j) = check_window(path.grid(), a, b)?;
    Ok(sup_abs(&path.values()[i..=j], 1))
}

/// Hölder seminorm of a node-major trajectory with `dim` components per
/// node, using the max norm on components.
pub(crate) fn holder_seminorm(x: &[f64], dim: usize, dt: f64, beta: f64) -> f64 {
    let n = x.len() / dim;
    if n < 2 {
        return 0.0;
    }
    let inv_gap: Vec<f64> = (0..n).map(|k| if k == 0 { 0.0 } else { (k as f64 * dt).powf(-beta) }).collect();
    let mut best: f64 = 0.0;
    for s in 0..n - 1 {
        let xs = &x[s * dim..(s + 1) * dim];
        for t in s + 1..n {
            let xt = &x[t * dim..(t + 1) * dim];
            let mut d: f64 = 0.0;
            for c in 0..dim {
                d = d.max((xt[c] - xs[c]).abs());
            }
            best = best.max(d * inv_gap[t - s]);
        }
    }
    best
}

pub(crate) fn sup_abs(x: &[f64], _dim: usize) -> f64 {
    x.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// The covariance density of fBm increments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kernel {
    hurst: f64,
}

impl Kernel {
    pub fn new(hurst: f64) -> Result<Self> {
        if !(hurst > 0.5 && hurst < 1.0) {
            return Err(Error::domain(format!("Hurst index must lie in (1/2, 1), got {hurst}")));
        }
        Ok(Self { hurst })
    }

    pub fn hurst(&self) -> f64 {
        self.hurst
    }

    /// `φ(u, v)`; infinite on the diagonal.
    pub fn density(&self, u: f64, v: f64) -> f64 {
        let h = self.hurst;
        h * (2.0 * h - 1.0) * (u - v).abs().powf(2.0 * h - 2.0)
    }

    /// Antiderivative of `s ↦ φ(s, u)`.
    fn anti(&self, s: f64, u: f64) -> f64 {
        let d = s - u;
        self.hurst * d.signum() * d.abs().powf(2.0 * self.hurst - 1.0)
    }

    /// Antiderivative of `s ↦ (s − u) φ(s, u)`.
    fn anti_first(&self, s: f64, u: f64) -> f64 {
        let h = self.hurst;
        (h - 0.5) * (s - u).abs().powf(2.0 * h)
    }

    /// `∫_{s0}^{s1} φ(s, u) ds`, valid for any position of `u`.
    pub fn cell_integral(&self, u: f64, s0: f64, s1: f64) -> f64 {
        self.anti(s1, u) - self.anti(s0, u)
    }

    /// Weights `(w0, w1)` with `∫_{s0}^{s1} c(s) φ(s,u) ds = w0·c(s0) + w1·c(s1)`
    /// for `c` linear on the cell.
    pub fn cell_weights(&self, u: f64, s0: f64, s1: f64) -> (f64, f64) {
        let m0 = self.cell_integral(u, s0, s1);
        let first = self.anti_first(s1, u) - self.anti_first(s0, u) + (u - s0) * m0;
        let m1 = first / (s1 - s0);
        (m0 - m1, m1)
    }

    /// Toeplitz weight table for a uniform grid, see [`CellTable`].
    pub fn cell_table(&self, grid: &TimeGrid) -> CellTable {
        let n = grid.n_steps() as isize;
        let dt = grid.dt();
        let mut lo = Vec::with_capacity(2 * n as usize);
        let mut hi = Vec::with_capacity(2 * n as usize);
        for d in -n..n {
            let (w0, w1) = self.cell_weights(0.0, d as f64 * dt, (d + 1) as f64 * dt);
            lo.push(w0);
            hi.push(w1);
        }
        CellTable { lo, hi, offset: n as usize }
    }

    /// `∫_0^t φ(s, u) du` in closed form.
    pub fn partial_integral(&self, s: f64, t: f64) -> Result<f64> {
        if s < 0.0 || t < 0.0 || !s.is_finite() || !t.is_finite() {
            return Err(Error::domain(format!("kernel integral needs nonnegative times, got s = {s}, t = {t}")));
        }
        Ok(self.partial_unchecked(s, t))
    }

    pub(crate) fn partial_unchecked(&self, s: f64, t: f64) -> f64 {
        let e = 2.0 * self.hurst - 1.0;
        if t >= s {
            self.hurst * (s.powf(e) + (t - s).powf(e))
        } else {
            self.hurst * (s.powf(e) - (s - t).powf(e))
        }
    }

    /// `∫_0^t ∫_0^t φ(u, v) du dv = t^{2H}`.
    pub fn double_integral(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0) {
            return Err(Error::domain(format!("kernel double integral needs t >= 0, got {t}")));
        }
        Ok(t.powf(2.0 * self.hurst))
    }
}

/// Product-integration weights of `φ` on a uniform grid.
///
/// For a cell `[s_j, s_{j+1}]` and a node `u_l`, with `d = j − l`,
/// `∫_{cell} c(s) φ(s, u_l) ds = lo(d)·c_j + hi(d)·c_{j+1}` whenever `c` is
/// linear on the cell.
#[derive(Debug, Clone)]
pub struct CellTable {
    lo: Vec<f64>,
    hi: Vec<f64>,
    offset: usize,
}

impl CellTable {
    #[inline]
    pub fn lo(&self, d: isize) -> f64 {
        self.lo[(d + self.offset as isize) as usize]
    }

    #[inline]
    pub fn hi(&self, d: isize) -> f64 {
        self.hi[(d + self.offset as isize) as usize]
    }

    /// `∫_{t_{j0}}^{t_{j1}} c(s) φ(s, u_l) ds` for the piecewise-linear
    /// interpolant of the node values `c`.
    pub fn integrate(&self, c: &[f64], j0: usize, j1: usize, l: usize) -> f64 {
        let mut acc = 0.0;
        for j in j0..j1 {
            let d = j as isize - l as isize;
            acc += self.lo(d) * c[j] + self.hi(d) * c[j + 1];
        }
        acc
    }
}

/// Free-function form of [`Kernel::partial_integral`].
pub fn kernel_partial_integral(kernel: &Kernel, s: f64, t: f64) -> Result<f64> {
    kernel.partial_integral(s, t)
}

/// Free-function form of [`Kernel::double_integral`].
pub fn kernel_double_integral(kernel: &Kernel, t: f64) -> Result<f64> {
    kernel.double_integral(t)
}
