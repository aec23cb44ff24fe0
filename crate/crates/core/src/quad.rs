//! Small quadrature and summation helpers shared by the numerical modules.

/// Gauss–Legendre rule with `n` points mapped to `[0, 1]`.
///
/// Nodes are found by Newton iteration on the Legendre recurrence, which is
/// accurate to machine precision for the modest `n` used here.
pub fn gauss_legendre_unit(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n > 0, "a quadrature rule needs at least one point");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let step = p / d;
            x -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        // x is the i-th largest root; map [-1, 1] -> [0, 1].
        nodes[n - 1 - i] = 0.5 * (1.0 + x);
        nodes[i] = 0.5 * (1.0 - x);
        weights[n - 1 - i] = 0.5 * w;
        weights[i] = 0.5 * w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// `x^p - y^p` for `x > y >= 0`, without the cancellation of the naive form
/// when `x` and `y` are close.
pub fn pow_diff(p: f64, x: f64, y: f64) -> f64 {
    if y <= 0.0 {
        return x.powf(p) - if y == 0.0 && p > 0.0 { 0.0 } else { y.powf(p) };
    }
    let r = ((y - x) / x).ln_1p();
    -x.powf(p) * (p * r).exp_m1()
}

/// Gamma function.
pub fn gamma(x: f64) -> f64 {
    libm::tgamma(x)
}

/// Compensated (Neumaier) summation. Order-dependent but deterministic.
#[derive(Debug, Clone, Copy, Default)]
pub struct NeumaierSum {
    sum: f64,
    comp: f64,
}

impl NeumaierSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

pub fn neumaier_sum<I: IntoIterator<Item = f64>>(xs: I) -> f64 {
    let mut acc = NeumaierSum::new();
    for x in xs {
        acc.add(x);
    }
    acc.value()
}

/// Ordinary least-squares slope of `y` against `x`.
pub fn ls_slope(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
    }
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        for n in 1..=12 {
            let (x, w) = gauss_legendre_unit(n);
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-14);
            for deg in 0..(2 * n) {
                let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
                assert!((q - 1.0 / (deg as f64 + 1.0)).abs() < 1e-13, "n={n} deg={deg}");
            }
        }
    }

    #[test]
    fn pow_diff_matches_naive_when_well_separated() {
        for &(p, x, y) in &[(0.5_f64, 2.0_f64, 1.0_f64), (-0.5, 3.0, 2.0), (1.5, 10.0, 9.0), (0.3, 1.0, 0.0)] {
            let naive: f64 = x.powf(p) - y.powf(p);
            assert!((pow_diff(p, x, y) - naive).abs() < 1e-14 * naive.abs().max(1.0));
        }
        // close arguments: compare with the series p * x^(p-1) * (x - y)
        let x = 1.0e8;
        let d = pow_diff(0.5, x, x - 1.0);
        let approx = 0.5 / x.sqrt() + 0.125 / x.powf(1.5);
        assert!((d - approx).abs() / approx < 1e-12);
    }

    #[test]
    fn gamma_spot_values() {
        assert!((gamma(0.5) - std::f64::consts::PI.sqrt()).abs() < 1e-14);
        assert!((gamma(1.5) - 0.886_226_925_452_758).abs() < 1e-14);
        assert!((gamma(5.0) - 24.0).abs() < 1e-12);
    }

    #[test]
    fn neumaier_recovers_small_terms() {
        let xs = [1.0, 1e100, 1.0, -1e100];
        assert_eq!(neumaier_sum(xs), 2.0);
    }
}
