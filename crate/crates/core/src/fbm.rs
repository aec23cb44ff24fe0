//! Sampling fractional Brownian motion on a grid, its covariance, and the
//! truncation `B_R` used to localize the driver.
//!
//! Two exact samplers are provided: Cholesky factorization of the covariance
//! of `(B(t_1), ..., B(t_N))`, and circulant embedding of the increments
//! (Davies–Harte). Factors are cached per `(H, T, N)`.

use std::collections::HashMap;
use std::str::FromStr;
use std::sync::{Arc, OnceLock, RwLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::time_grid::{HolderExponent, SampledPath, TimeGrid};

/// Sampling scheme for [`sample_fbm`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FbmMethod {
    #[default]
    Cholesky,
    Circulant,
}

impl FromStr for FbmMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cholesky" => Ok(Self::Cholesky),
            "circulant" => Ok(Self::Circulant),
            other => Err(Error::domain(format!("unknown fBm method `{other}` (cholesky | circulant)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FbmConfig {
    pub hurst: f64,
    pub grid: TimeGrid,
    pub seed: u64,
    pub method: FbmMethod,
}

impl FbmConfig {
    pub fn new(hurst: f64, grid: TimeGrid, seed: u64) -> Result<Self> {
        check_hurst(hurst)?;
        Ok(Self {
            hurst,
            grid,
            seed,
            method: FbmMethod::Cholesky,
        })
    }

    pub fn with_method(mut self, method: FbmMethod) -> Self {
        self.method = method;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

fn check_hurst(hurst: f64) -> Result<()> {
    if !(hurst > 0.5 && hurst < 1.0) {
        return Err(Error::domain(format!("Hurst index must lie in (1/2, 1), got {hurst}")));
    }
    Ok(())
}

/// `E[B(t)B(s)] = ½(t^{2H} + s^{2H} − |t−s|^{2H})`.
pub fn covariance(hurst: f64, t: f64, s: f64) -> Result<f64> {
    if !(t >= 0.0 && s >= 0.0) {
        return Err(Error::domain(format!("covariance needs nonnegative times, got t = {t}, s = {s}")));
    }
    Ok(cov(hurst, t, s))
}

fn cov(h: f64, t: f64, s: f64) -> f64 {
    let e = 2.0 * h;
    0.5 * (t.powf(e) + s.powf(e) - (t - s).abs().powf(e))
}

/// Deterministic generator for a given seed. ChaCha is counter based, so
/// seeds `base + i` give independent, reproducible streams.
pub fn rng_for_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Draws one fBm path with `B(0) = 0`.
pub fn sample_fbm(config: &FbmConfig) -> Result<SampledPath> {
    check_hurst(config.hurst)?;
    let mut rng = rng_for_seed(config.seed);
    let values = match config.method {
        FbmMethod::Cholesky => sample_cholesky(config, &mut rng)?,
        FbmMethod::Circulant => sample_circulant(config, &mut rng)?,
    };
    SampledPath::new(config.grid, values)
}

type CacheKey = (u64, u64, usize);

fn key(config: &FbmConfig) -> CacheKey {
    (config.hurst.to_bits(), config.grid.horizon().to_bits(), config.grid.n_steps())
}

fn cholesky_cache() -> &'static RwLock<HashMap<CacheKey, Arc<Vec<f64>>>> {
    static CACHE: OnceLock<RwLock<HashMap<CacheKey, Arc<Vec<f64>>>>> = OnceLock::new();
    CACHE.get_or_init(|| RwLock::new(HashMap::new()))
}

fn circulant_cache() -> &'static RwLock<HashMap<CacheKey, Arc<Vec<f64>>>> {
    static CACHE: OnceLock<RwLock<HashMap<CacheKey, Arc<Vec<f64>>>>> = OnceLock::new();
    CACHE.get_or_init(|| RwLock::new(HashMap::new()))
}

fn cached<F>(cache: &RwLock<HashMap<CacheKey, Arc<Vec<f64>>>>, k: CacheKey, build: F) -> Result<Arc<Vec<f64>>>
where
    F: FnOnce() -> Result<Vec<f64>>,
{
    if let Some(v) = cache.read().expect("factor cache poisoned").get(&k) {
        return Ok(Arc::clone(v));
    }
    let built = Arc::new(build()?);
    let mut w = cache.write().expect("factor cache poisoned");
    Ok(Arc::clone(w.entry(k).or_insert(built)))
}

/// Drops all cached factorizations.
pub fn clear_factor_cache() {
    cholesky_cache().write().expect("factor cache poisoned").clear();
    circulant_cache().write().expect("factor cache poisoned").clear();
}

/// Lower Cholesky factor of a symmetric matrix given by `entry(i, j)`,
/// stored packed by rows (row `i` starts at `i(i+1)/2`).
pub fn cholesky_packed(n: usize, entry: impl Fn(usize, usize) -> f64) -> Result<Vec<f64>> {
    let mut l = vec![0.0; n * (n + 1) / 2];
    let row = |i: usize| i * (i + 1) / 2;
    for i in 0..n {
        let ri = row(i);
        for j in 0..=i {
            let rj = row(j);
            let mut s = entry(i, j);
            for k in 0..j {
                s -= l[ri + k] * l[rj + k];
            }
            if i == j {
                if !(s > 0.0) {
                    return Err(Error::Factorization { pivot: i, value: s });
                }
                l[ri + i] = s.sqrt();
            } else {
                l[ri + j] = s / l[rj + j];
            }
        }
    }
    Ok(l)
}

fn sample_cholesky(config: &FbmConfig, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let n = config.grid.n_steps();
    let grid = config.grid;
    let h = config.hurst;
    let factor = cached(cholesky_cache(), key(config), || {
        cholesky_packed(n, |i, j| cov(h, grid.node(i + 1), grid.node(j + 1)))
    })?;
    let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let mut out = Vec::with_capacity(n + 1);
    out.push(0.0);
    for i in 0..n {
        let r = i * (i + 1) / 2;
        let row = &factor[r..=r + i];
        out.push(row.iter().zip(&z).map(|(a, b)| a * b).sum());
    }
    Ok(out)
}

/// Square roots of the circulant eigenvalues scaled by `1/sqrt(2N)`.
fn circulant_sqrt_eigs(config: &FbmConfig) -> Result<Vec<f64>> {
    let n = config.grid.n_steps();
    let h = config.hurst;
    let scale = config.grid.dt().powf(2.0 * h);
    let gamma = |k: usize| {
        let k = k as f64;
        0.5 * scale * ((k + 1.0).powf(2.0 * h) - 2.0 * k.powf(2.0 * h) + (k - 1.0).abs().powf(2.0 * h))
    };
    let m = 2 * n;
    let mut c: Vec<Complex64> = (0..m)
        .map(|j| {
            let k = if j <= n { j } else { m - j };
            Complex64::new(gamma(k), 0.0)
        })
        .collect();
    FftPlanner::new().plan_fft_forward(m).process(&mut c);
    let max = c.iter().map(|z| z.re.abs()).fold(0.0, f64::max);
    c.iter()
        .enumerate()
        .map(|(i, z)| {
            if z.re < -1e-10 * max {
                Err(Error::Factorization { pivot: i, value: z.re })
            } else {
                Ok((z.re.max(0.0) / m as f64).sqrt())
            }
        })
        .collect()
}

fn sample_circulant(config: &FbmConfig, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let n = config.grid.n_steps();
    let m = 2 * n;
    let eig = cached(circulant_cache(), key(config), || circulant_sqrt_eigs(config))?;
    let mut w: Vec<Complex64> = eig
        .iter()
        .map(|&s| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex64::new(s * re, s * im)
        })
        .collect();
    FftPlanner::new().plan_fft_forward(m).process(&mut w);
    let mut out = Vec::with_capacity(n + 1);
    let mut acc = 0.0;
    out.push(0.0);
    for z in w.iter().take(n) {
        acc += z.re;
        out.push(acc);
    }
    Ok(out)
}

/// Localization level: stop once `|B| > R` or the running Hölder norm exceeds `R`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncationLevel {
    pub radius: f64,
    pub beta: HolderExponent,
}

/// Returns the stopped path and the grid stopping time `τ_R`.
///
/// `τ_R` is the first node where the level is exceeded (or `T`). From that
/// node on the path is frozen at the last value that still respected the
/// level, so the grid norms of the result stay below `R`.
pub fn truncate(path: &SampledPath, level: TruncationLevel) -> (SampledPath, f64) {
    let grid = *path.grid();
    let x = path.values();
    let beta = level.beta.value();
    let r = level.radius;
    let mut running_holder: f64 = 0.0;
    let mut stop = None;
    for i in 0..x.len() {
        for j in 0..i {
            let gap = grid.node(i) - grid.node(j);
            running_holder = running_holder.max((x[i] - x[j]).abs() / gap.powf(beta));
        }
        if x[i].abs() > r || running_holder > r {
            stop = Some(i);
            break;
        }
    }
    match stop {
        None => (path.clone(), grid.horizon()),
        Some(i) => {
            let frozen = if i == 0 { 0.0 } else { x[i - 1] };
            let mut values = x.to_vec();
            for v in values.iter_mut().skip(i) {
                *v = frozen;
            }
            (SampledPath::new(grid, values).expect("finite input"), grid.node(i))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn covariance_spot_values() {
        assert!((covariance(0.75, 1.0, 1.0).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(covariance(0.6, 1.0, 0.0).unwrap(), 0.0);
        assert!((covariance(0.75, 2.0, 1.0).unwrap() - std::f64::consts::SQRT_2).abs() < 1e-7);
        assert!(covariance(0.75, -1.0, 1.0).is_err());
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let g = TimeGrid::new(1.0, 64).unwrap();
        for method in [FbmMethod::Cholesky, FbmMethod::Circulant] {
            let c = FbmConfig::new(0.7, g, 9).unwrap().with_method(method);
            let a = sample_fbm(&c).unwrap();
            let b = sample_fbm(&c).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.value(0), 0.0);
            assert_ne!(a, sample_fbm(&c.with_seed(10)).unwrap());
        }
    }

    #[test]
    fn cholesky_reports_failing_pivot() {
        // rank-one matrix: second pivot vanishes
        let err = cholesky_packed(3, |_, _| 1.0).unwrap_err();
        match err {
            Error::Factorization { pivot, .. } => assert_eq!(pivot, 1),
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn circulant_embedding_reproduces_covariance_of_increments() {
        // exact check through the eigen decomposition: E[X_0 X_k] equals the
        // autocovariance of fractional Gaussian noise.
        let g = TimeGrid::new(1.0, 16).unwrap();
        let c = FbmConfig::new(0.8, g, 0).unwrap();
        let s = circulant_sqrt_eigs(&c).unwrap();
        let m = s.len();
        // covariance of Re(W) is the inverse DFT of s^2 * m (real, symmetric)
        for k in 0..16usize {
            let mut acc = 0.0;
            for (j, sj) in s.iter().enumerate() {
                let ang = 2.0 * std::f64::consts::PI * (j * k) as f64 / m as f64;
                acc += sj * sj * ang.cos();
            }
            let kf = k as f64;
            let h2 = 1.6;
            let want = 0.5 * g.dt().powf(h2) * ((kf + 1.0).powf(h2) - 2.0 * kf.powf(h2) + (kf - 1.0).abs().powf(h2));
            assert!((acc - want).abs() < 1e-12, "lag {k}: {acc} vs {want}");
        }
    }

    #[test]
    fn truncate_examples() {
        let g = TimeGrid::new(1.0, 100).unwrap();
        let lin = SampledPath::from_fn(g, |t| 2.0 * t).unwrap();
        let one = HolderExponent::new(1.0).unwrap();

        let (p, tau) = truncate(&lin, TruncationLevel { radius: 10.0, beta: one });
        assert_eq!(tau, 1.0);
        assert_eq!(p, lin);

        // with β = 1 the Hölder norm of 2t is 2 > R on the very first step
        let (p, tau) = truncate(&lin, TruncationLevel { radius: 1.0, beta: one });
        assert!((tau - 0.01).abs() < 1e-12);
        assert!(p.values().iter().skip(1).all(|&v| v == 0.0));

        let steep = SampledPath::from_fn(g, |t| 2.0 * t).unwrap();
        let lvl = TruncationLevel { radius: 1.0, beta: HolderExponent::new(0.01).unwrap() };
        let (p, tau) = truncate(&steep, lvl);
        // the Hölder-0.01 norm of 2t on [0, t] is 2t^0.99, so the sup level
        // |2t| > 1 and the norm level trip at about the same node
        assert!((tau - 0.5).abs() < 0.02, "tau = {tau}");
        assert!((p.last() - 1.0).abs() < 0.03);
    }

    #[test]
    fn truncate_at_zero_radius_stops_immediately() {
        let g = TimeGrid::new(1.0, 32).unwrap();
        let b = sample_fbm(&FbmConfig::new(0.7, g, 3).unwrap()).unwrap();
        let (p, tau) = truncate(&b, TruncationLevel { radius: 0.0, beta: HolderExponent::new(0.6).unwrap() });
        assert_eq!(tau, g.dt());
        assert!(p.values().iter().all(|&v| v == 0.0));
    }
}
