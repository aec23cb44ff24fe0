//! Riemann–Liouville integrals and Weyl derivatives of sampled paths.
//!
//! All singular weights are integrated in closed form against the
//! piecewise-linear interpolant of the samples (product integration), so the
//! discrete operators are exact for piecewise-linear input.

use crate::error::{Error, Result};
use crate::quad::{gamma, gauss_legendre_unit, pow_diff};
use crate::time_grid::{SampledPath, TimeGrid};

/// Order `α ∈ (0, 1)` of a fractional operator.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct FracOrder(f64);

impl FracOrder {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::domain(format!("fractional order must lie in (0, 1), got {alpha}")));
        }
        Ok(Self(alpha))
    }

    pub fn value(&self) -> f64 {
        self.0
    }
}

/// Output of a Weyl derivative. The endpoint node is only defined as a
/// limit when the function vanishes there; otherwise it is reported in
/// `flagged` and holds `NaN`.
#[derive(Debug, Clone, PartialEq)]
pub struct FracDerivative {
    grid: TimeGrid,
    values: Vec<f64>,
    flagged: Vec<usize>,
}

impl FracDerivative {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, i: usize) -> f64 {
        self.values[i]
    }

    pub fn flagged(&self) -> &[usize] {
        &self.flagged
    }

    /// Converts to a path, failing if any node was flagged.
    pub fn into_path(self) -> Result<SampledPath> {
        if let Some(&i) = self.flagged.first() {
            return Err(Error::domain(format!(
                "derivative is undefined at node {i} (t = {}): the function does not vanish at the endpoint",
                self.grid.node(i)
            )));
        }
        SampledPath::new(self.grid, self.values)
    }
}

/// `I^α_{a+} f(t) = Γ(α)^{-1} ∫_a^t (t−s)^{α−1} f(s) ds` at every node
/// (zero before `a`).
pub fn frac_integral_left(f: &SampledPath, alpha: FracOrder, a: f64) -> Result<SampledPath> {
    let grid = *f.grid();
    let ia = grid.index_of(a)?;
    let al = alpha.value();
    let x = &f.values()[ia..];
    let m = x.len() - 1;
    let (wa, wb) = integral_weights(al, m);
    let scale = grid.dt().powf(al) / gamma(al);
    let mut out = vec![0.0; grid.len()];
    for i in 1..=m {
        let mut acc = 0.0;
        for j in 0..i {
            let k = i - j;
            acc += x[j] * (wa[k] - wb[k]) + x[j + 1] * wb[k];
        }
        out[ia + i] = scale * acc;
    }
    SampledPath::new(grid, out)
}

/// `A_k = ∫_0^1 (k−x)^{α−1} dx` and `B_k = ∫_0^1 (k−x)^{α−1} x dx`.
fn integral_weights(alpha: f64, m: usize) -> (Vec<f64>, Vec<f64>) {
    let (gx, gw) = gauss_legendre_unit(8);
    let mut a = vec![0.0; m + 1];
    let mut b = vec![0.0; m + 1];
    for k in 1..=m {
        let kf = k as f64;
        a[k] = pow_diff(alpha, kf, kf - 1.0) / alpha;
        b[k] = if k < 16 {
            kf * a[k] - pow_diff(alpha + 1.0, kf, kf - 1.0) / (alpha + 1.0)
        } else {
            gx.iter().zip(&gw).map(|(x, w)| w * (kf - x).powf(alpha - 1.0) * x).sum()
        };
    }
    (a, b)
}

/// Left Weyl derivative
/// `D^α_{a+} f(t) = Γ(1−α)^{-1} [ f(t)/(t−a)^α + α ∫_a^t (f(t)−f(s))/(t−s)^{α+1} ds ]`.
pub fn weyl_derivative_left(f: &SampledPath, alpha: FracOrder, a: f64) -> Result<FracDerivative> {
    let grid = *f.grid();
    let ia = grid.index_of(a)?;
    let raw = weyl_left_nodes(&f.values()[ia..], grid.dt(), alpha.value());
    Ok(place_left(grid, ia, raw, f.value(ia)))
}

/// Like [`weyl_derivative_left`], with a correction for the `(t−a)^α`
/// behaviour that fractional integrals have at the left end.
///
/// The samples are split as `f = c·(t−a)^α + g`, with `c` fitted to the
/// first two increments; `g` goes through the piecewise-linear scheme and the
/// power term is differentiated exactly (`D^α (t−a)^α = Γ(1+α)`). Use it on
/// functions known to start like a power law, e.g. the output of
/// [`frac_integral_left`].
pub fn weyl_derivative_left_corrected(f: &SampledPath, alpha: FracOrder, a: f64) -> Result<FracDerivative> {
    let grid = *f.grid();
    let ia = grid.index_of(a)?;
    let al = alpha.value();
    let x = &f.values()[ia..];
    if x.len() < 3 {
        return Err(Error::domain("start correction needs at least two steps after the endpoint"));
    }
    let dt = grid.dt();
    let c = (2.0 * (x[1] - x[0]) - (x[2] - x[0])) / (dt.powf(al) * (2.0 - 2f64.powf(al)));
    let g: Vec<f64> = x
        .iter()
        .enumerate()
        .map(|(i, v)| v - c * (i as f64 * dt).powf(al))
        .collect();
    let mut raw = weyl_left_nodes(&g, dt, al);
    let shift = c * gamma(1.0 + al);
    for v in raw.iter_mut().skip(1) {
        *v += shift;
    }
    Ok(place_left(grid, ia, raw, x[0]))
}

/// Right Weyl derivative in real form (no `(−1)^α` phase):
/// `Γ(1−α)^{-1} [ f(t)/(b−t)^α + α ∫_t^b (f(t)−f(s))/(s−t)^{α+1} ds ]`.
pub fn weyl_derivative_right(f: &SampledPath, alpha: FracOrder, b: f64) -> Result<FracDerivative> {
    let grid = *f.grid();
    let ib = grid.index_of(b)?;
    let reflected: Vec<f64> = f.values()[..=ib].iter().rev().copied().collect();
    let raw = weyl_left_nodes(&reflected, grid.dt(), alpha.value());
    let mut values = vec![0.0; grid.len()];
    let mut flagged = Vec::new();
    for (k, v) in raw.into_iter().enumerate() {
        let i = ib - k;
        if k == 0 {
            if f.value(ib) == 0.0 {
                values[i] = 0.0;
            } else {
                values[i] = f64::NAN;
                flagged.push(i);
            }
        } else {
            values[i] = v;
        }
    }
    Ok(FracDerivative { grid, values, flagged })
}

fn place_left(grid: TimeGrid, ia: usize, raw: Vec<f64>, fa: f64) -> FracDerivative {
    let mut values = vec![0.0; grid.len()];
    let mut flagged = Vec::new();
    for (k, v) in raw.into_iter().enumerate() {
        if k == 0 {
            if fa == 0.0 {
                values[ia] = 0.0;
            } else {
                values[ia] = f64::NAN;
                flagged.push(ia);
            }
        } else {
            values[ia + k] = v;
        }
    }
    FracDerivative { grid, values, flagged }
}

/// Left Weyl derivative of the interpolant of `x` (left end at index 0) at
/// nodes `1..len`. Entry 0 is left as `NaN`.
pub(crate) fn weyl_left_nodes(x: &[f64], dt: f64, alpha: f64) -> Vec<f64> {
    let m = x.len() - 1;
    let c = alpha / (1.0 - alpha);
    let (p, r) = derivative_weights(alpha, 0.0, m);
    let scale = dt.powf(-alpha) / gamma(1.0 - alpha);
    let mut out = vec![f64::NAN; m + 1];
    for i in 1..=m {
        let fi = x[i];
        // last cell: f(t) − f(s) = slope·(t − s) exactly
        let mut acc = fi * (i as f64).powf(-alpha) + c * (x[i] - x[i - 1]);
        for j in 0..i - 1 {
            let k = i - j;
            let df = x[j + 1] - x[j];
            acc += (fi - x[j]) * p[k] - df * r[k];
        }
        out[i] = scale * acc;
    }
    out
}

/// Left Weyl derivative of the interpolant of `x` at the interior points
/// `t_i + θ·dt`, `i = 0..len−1`, for `θ ∈ (0, 1)`.
pub(crate) fn weyl_left_offsets(x: &[f64], dt: f64, alpha: f64, theta: f64) -> Vec<f64> {
    let m = x.len() - 1;
    let c = alpha / (1.0 - alpha);
    let (p, r) = derivative_weights(alpha, theta, m);
    let scale = dt.powf(-alpha) / gamma(1.0 - alpha);
    let partial = c * theta.powf(1.0 - alpha);
    let mut out = vec![0.0; m];
    for i in 0..m {
        let slope = x[i + 1] - x[i];
        let ft = x[i] + theta * slope;
        let mut acc = ft * (i as f64 + theta).powf(-alpha) + partial * slope;
        for j in 0..i {
            let k = i - j;
            acc += (ft - x[j]) * p[k] - (x[j + 1] - x[j]) * r[k];
        }
        out[i] = scale * acc;
    }
    out
}

/// Weights for a full cell `k` cells back from the evaluation point
/// `t = t_i + θ dt`, in units of `dt`:
/// `P_k = (k−1+θ)^{−α} − (k+θ)^{−α}`, `Q_k = (k+θ)^{1−α} − (k−1+θ)^{1−α}`,
/// and `R_k = (k+θ) P_k − α/(1−α) Q_k`, so that the cell contributes
/// `(f(t) − f_j) P_k − Δf_j R_k`.
fn derivative_weights(alpha: f64, theta: f64, m: usize) -> (Vec<f64>, Vec<f64>) {
    let c = alpha / (1.0 - alpha);
    let mut p = vec![0.0; m + 1];
    let mut r = vec![0.0; m + 1];
    for k in 1..=m {
        let hi = k as f64 + theta;
        let lo = hi - 1.0;
        if lo <= 0.0 {
            continue;
        }
        // x^{-α} is decreasing: P = lo^{-α} − hi^{-α} = −(hi^{-α} − lo^{-α})
        let pk = -pow_diff(-alpha, hi, lo);
        let qk = pow_diff(1.0 - alpha, hi, lo);
        p[k] = pk;
        r[k] = hi * pk - c * qk;
    }
    (p, r)
}
