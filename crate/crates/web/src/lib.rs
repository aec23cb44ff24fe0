//! Browser bindings for a handful of `fracsde` operations.
//!
//! Every export takes plain numbers and returns a flat `Float64Array`, so the
//! page needs no serialization layer. Errors surface in JavaScript as thrown
//! strings.

use fracsde::fbm::{sample_fbm, FbmConfig, FbmMethod};
use fracsde::integrators::{ito_integral, young_riemann, EvalPoint, IntegrandSpec, MalliavinKernel};
use fracsde::linear_quasi::{solve_linear_explicit, TimeFn};
use fracsde::mc::Experiment;
use fracsde::{HolderExponent, Kernel, SampledPath, TimeGrid};
use wasm_bindgen::prelude::*;

/// Largest grid the page may request; the linear solver is quadratic in it.
pub const MAX_STEPS: usize = 4096;
pub const MAX_SAMPLES: usize = 100_000;

fn driver(hurst: f64, steps: usize, seed: u64) -> Result<SampledPath, String> {
    if steps > MAX_STEPS {
        return Err(format!("at most {MAX_STEPS} steps"));
    }
    let grid = TimeGrid::new(1.0, steps).map_err(|e| e.to_string())?;
    let config = FbmConfig::new(hurst, grid, seed).map_err(|e| e.to_string())?;
    sample_fbm(&config.with_method(FbmMethod::Circulant)).map_err(|e| e.to_string())
}

/// fBm on `[0, 1]` with `steps` cells; node values only.
#[wasm_bindgen]
pub fn fbm_path(hurst: f64, steps: usize, seed: u64) -> Result<Vec<f64>, String> {
    driver(hurst, steps, seed).map(SampledPath::into_values)
}

/// `[∫B δB, ∫B dB, B(1)]` along one path: the pathwise and Wick–Itô
/// integrals of the path against itself.
#[wasm_bindgen]
pub fn self_integrals(hurst: f64, steps: usize, seed: u64) -> Result<Vec<f64>, String> {
    let b = driver(hurst, steps, seed)?;
    let kernel = Kernel::new(hurst).map_err(|e| e.to_string())?;
    let beta = HolderExponent::default_for(hurst);
    let f = IntegrandSpec::new(b.clone(), beta);
    let pathwise = young_riemann(&f, &b, 0.0, 1.0, EvalPoint::Mid).map_err(|e| e.to_string())?;
    let f = f.with_malliavin(MalliavinKernel::Indicator { factor: None });
    let ito = ito_integral(&f, &b, &kernel, 0.0, 1.0).map_err(|e| e.to_string())?;
    Ok(vec![pathwise, ito, b.last()])
}

/// Monte Carlo means of both self-integrals over `samples` paths:
/// `[pathwise mean, stderr, Itô mean, stderr, pathwise target]`.
#[wasm_bindgen]
pub fn mean_contrast(hurst: f64, steps: usize, samples: usize, seed: u64) -> Result<Vec<f64>, String> {
    if samples > MAX_SAMPLES {
        return Err(format!("at most {MAX_SAMPLES} samples"));
    }
    let grid = TimeGrid::new(1.0, steps).map_err(|e| e.to_string())?;
    let pathwise = Experiment::PathwiseMean.run(samples, seed, hurst, grid).map_err(|e| e.to_string())?;
    let ito = Experiment::ZeroMeanIto.run(samples, seed, hurst, grid).map_err(|e| e.to_string())?;
    Ok(vec![pathwise.mean, pathwise.stderr, ito.mean, ito.stderr, pathwise.target])
}

/// Solution of `dx = drift·x dt + diffusion·x dB` (Itô) with `x(0) = x0`
/// at every node, followed by the driving path: `2(steps + 1)` values.
#[wasm_bindgen]
pub fn linear_solution(hurst: f64, steps: usize, seed: u64, drift: f64, diffusion: f64, x0: f64) -> Result<Vec<f64>, String> {
    let b = driver(hurst, steps, seed)?;
    let kernel = Kernel::new(hurst).map_err(|e| e.to_string())?;
    let zero = TimeFn::constant(0.0);
    let x = solve_linear_explicit(
        &TimeFn::constant(drift),
        &zero,
        &TimeFn::constant(diffusion),
        &zero,
        x0,
        &b,
        &kernel,
    )
    .map_err(|e| e.to_string())?;
    let mut out = x.into_values();
    out.extend_from_slice(b.values());
    Ok(out)
}
