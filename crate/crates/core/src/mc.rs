//! Monte Carlo harness with reproducible per-sample seeds.
//!
//! Sample `i` always uses seed `base_seed + i`, samples are stored in index
//! order and reduced sequentially with compensated summation, so a report
//! does not depend on the number of threads.

use std::fmt;
use std::str::FromStr;

#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fbm::{sample_fbm, FbmConfig, FbmMethod};
use crate::integrators::{ito_integral, young_riemann, EvalPoint, IntegrandSpec, MalliavinKernel};
use crate::quad::NeumaierSum;
use crate::time_grid::{HolderExponent, Kernel, SampledPath, TimeGrid};

/// Largest tolerated share of non-finite samples.
pub const MAX_NON_FINITE_SHARE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum TolerancePolicy {
    ThreeSigma,
    Absolute(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct McPlan {
    pub estimator: String,
    pub n_samples: usize,
    pub base_seed: u64,
    pub target: f64,
    pub tolerance: TolerancePolicy,
}

impl McPlan {
    pub fn new(estimator: impl Into<String>, n_samples: usize, base_seed: u64, target: f64) -> Result<Self> {
        if n_samples < 100 {
            return Err(Error::domain(format!("Monte Carlo needs at least 100 samples, got {n_samples}")));
        }
        Ok(Self { estimator: estimator.into(), n_samples, base_seed, target, tolerance: TolerancePolicy::ThreeSigma })
    }

    pub fn with_tolerance(mut self, tolerance: TolerancePolicy) -> Self {
        self.tolerance = tolerance;
        self
    }

    fn passes(&self, estimate: f64, stderr: f64) -> bool {
        let gap = (estimate - self.target).abs();
        match self.tolerance {
            TolerancePolicy::ThreeSigma => gap <= 3.0 * stderr,
            TolerancePolicy::Absolute(tol) => gap <= tol,
        }
    }
}

/// Outcome of [`run_mc`] or [`variance_check`]. For a variance check `mean`
/// holds the sample variance and `stderr` its standard error.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McReport {
    pub estimator: String,
    pub mean: f64,
    pub stderr: f64,
    pub target: f64,
    pub pass: bool,
    pub samples: usize,
    pub non_finite: usize,
}

impl fmt::Display for McReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: {:.6} ± {:.6} (target {:.6}, {} samples) {}",
            self.estimator,
            self.mean,
            self.stderr,
            self.target,
            self.samples,
            if self.pass { "pass" } else { "FAIL" }
        )
    }
}

/// Draws every sample; errors from the estimator abort the run (the first
/// failing index wins).
fn draw(plan: &McPlan, sample: &(impl Fn(u64) -> Result<f64> + Sync)) -> Result<(Vec<f64>, usize)> {
    let seed = |i: usize| plan.base_seed.wrapping_add(i as u64);
    #[cfg(feature = "parallel")]
    let raw: Vec<Result<f64>> = (0..plan.n_samples).into_par_iter().map(|i| sample(seed(i))).collect();
    #[cfg(not(feature = "parallel"))]
    let raw: Vec<Result<f64>> = (0..plan.n_samples).map(|i| sample(seed(i))).collect();

    let mut values = Vec::with_capacity(raw.len());
    let mut non_finite = 0;
    for r in raw {
        let v = r?;
        if v.is_finite() {
            values.push(v);
        } else {
            non_finite += 1;
        }
    }
    if non_finite as f64 > MAX_NON_FINITE_SHARE * plan.n_samples as f64 {
        return Err(Error::NonFiniteSamples { count: non_finite, total: plan.n_samples });
    }
    Ok((values, non_finite))
}

fn mean(xs: &[f64]) -> f64 {
    let mut s = NeumaierSum::new();
    xs.iter().for_each(|x| s.add(*x));
    s.value() / xs.len() as f64
}

fn central_moment(xs: &[f64], m: f64, k: i32) -> f64 {
    let mut s = NeumaierSum::new();
    xs.iter().for_each(|x| s.add((x - m).powi(k)));
    s.value()
}

/// Sample mean and its standard error; passes when the mean is within the
/// plan's tolerance of the target.
pub fn run_mc(plan: &McPlan, sample: impl Fn(u64) -> Result<f64> + Sync) -> Result<McReport> {
    let (xs, non_finite) = draw(plan, &sample)?;
    let n = xs.len() as f64;
    let m = mean(&xs);
    let var = central_moment(&xs, m, 2) / (n - 1.0);
    let stderr = (var / n).sqrt();
    Ok(McReport {
        estimator: plan.estimator.clone(),
        mean: m,
        stderr,
        target: plan.target,
        pass: plan.passes(m, stderr),
        samples: xs.len(),
        non_finite,
    })
}

/// Sample variance of `sample` with standard error `sqrt((m₄ − s⁴)/n)`.
pub fn run_variance(plan: &McPlan, sample: impl Fn(u64) -> Result<f64> + Sync) -> Result<McReport> {
    let (xs, non_finite) = draw(plan, &sample)?;
    let n = xs.len() as f64;
    let m = mean(&xs);
    let var = central_moment(&xs, m, 2) / (n - 1.0);
    let m4 = central_moment(&xs, m, 4) / n;
    let stderr = ((m4 - var * var).max(0.0) / n).sqrt();
    Ok(McReport {
        estimator: plan.estimator.clone(),
        mean: var,
        stderr,
        target: plan.target,
        pass: plan.passes(var, stderr),
        samples: xs.len(),
        non_finite,
    })
}

/// `∫∫ φ(u,v) f(u) f(v) du dv` with `f` taken constant on each cell at its
/// midpoint value. Cell-pair integrals of `φ` are exact increment
/// covariances, so this is also the exact variance of the midpoint sum
/// `Σ f(ξ_k) ΔB_k`.
pub fn isometry_target(f: &SampledPath, kernel: &Kernel) -> f64 {
    let grid = f.grid();
    let n = grid.n_steps();
    let e = 2.0 * kernel.hurst();
    let scale = grid.dt().powf(e);
    let cov: Vec<f64> = (0..n)
        .map(|d| {
            let d = d as f64;
            0.5 * scale * ((d + 1.0).powf(e) + (d - 1.0).abs().powf(e) - 2.0 * d.powf(e))
        })
        .collect();
    let fv = f.values();
    let mid: Vec<f64> = (0..n).map(|k| 0.5 * (fv[k] + fv[k + 1])).collect();
    let mut acc = NeumaierSum::new();
    for j in 0..n {
        acc.add(mid[j] * mid[j] * cov[0]);
        for k in j + 1..n {
            acc.add(2.0 * mid[j] * mid[k] * cov[k - j]);
        }
    }
    acc.value()
}

/// Variance of `∫ f dB` for a deterministic `f` over fBm paths drawn on
/// `f`'s grid, against [`isometry_target`]. The plan's `target` is replaced.
pub fn variance_check(plan: &McPlan, f: &IntegrandSpec, hurst: f64) -> Result<McReport> {
    if !matches!(f.malliavin, Some(MalliavinKernel::Zero)) {
        return Err(Error::domain("variance check needs a deterministic integrand"));
    }
    let kernel = Kernel::new(hurst)?;
    let grid = *f.values.grid();
    let plan = McPlan { target: isometry_target(&f.values, &kernel), ..plan.clone() };
    let config = FbmConfig::new(hurst, grid, 0)?.with_method(FbmMethod::Circulant);
    run_variance(&plan, |seed| {
        let b = sample_fbm(&config.with_seed(seed))?;
        young_riemann(f, &b, 0.0, grid.horizon(), EvalPoint::Mid)
    })
}

/// The distributional identities exposed on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    /// `E ∫_0^T B dB = 0` for the Wick–Itô integral.
    ZeroMeanIto,
    /// `E ∫_0^T B δB = T^{2H}/2` for the pathwise integral.
    PathwiseMean,
    /// `Var B(T) = T^{2H}`.
    Isometry,
    /// `E exp{B(T) − T^{2H}/2} = 1`.
    LognormalMean,
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero-mean-ito" => Ok(Self::ZeroMeanIto),
            "pathwise-mean" => Ok(Self::PathwiseMean),
            "isometry" => Ok(Self::Isometry),
            "lognormal-mean" => Ok(Self::LognormalMean),
            other => Err(Error::domain(format!(
                "unknown experiment `{other}` (zero-mean-ito | pathwise-mean | isometry | lognormal-mean)"
            ))),
        }
    }
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Self::ZeroMeanIto => "zero-mean-ito",
            Self::PathwiseMean => "pathwise-mean",
            Self::Isometry => "isometry",
            Self::LognormalMean => "lognormal-mean",
        }
    }

    pub fn target(&self, hurst: f64, horizon: f64) -> f64 {
        match self {
            Self::ZeroMeanIto => 0.0,
            Self::PathwiseMean => 0.5 * horizon.powf(2.0 * hurst),
            Self::Isometry => horizon.powf(2.0 * hurst),
            Self::LognormalMean => 1.0,
        }
    }

    pub fn run(&self, n_samples: usize, base_seed: u64, hurst: f64, grid: TimeGrid) -> Result<McReport> {
        let kernel = Kernel::new(hurst)?;
        let horizon = grid.horizon();
        let plan = McPlan::new(self.name(), n_samples, base_seed, self.target(hurst, horizon))?;
        let config = FbmConfig::new(hurst, grid, base_seed)?.with_method(FbmMethod::Circulant);
        let path = |seed: u64| sample_fbm(&config.with_seed(seed));
        let beta = HolderExponent::default_for(hurst);
        match self {
            Self::ZeroMeanIto => run_mc(&plan, |seed| {
                let b = path(seed)?;
                let f = IntegrandSpec::new(b.clone(), beta).with_malliavin(MalliavinKernel::Indicator { factor: None });
                ito_integral(&f, &b, &kernel, 0.0, horizon)
            }),
            Self::PathwiseMean => run_mc(&plan, |seed| {
                let b = path(seed)?;
                young_riemann(&IntegrandSpec::new(b.clone(), beta), &b, 0.0, horizon, EvalPoint::Mid)
            }),
            Self::Isometry => run_variance(&plan, |seed| Ok(path(seed)?.last())),
            Self::LognormalMean => {
                let half_var = 0.5 * horizon.powf(2.0 * hurst);
                run_mc(&plan, |seed| Ok((path(seed)?.last() - half_var).exp()))
            }
        }
    }
}
