//! Command-line front end. Exit codes: 0 success, 1 domain error or bad
//! usage, 2 numerical failure, 3 I/O or parse error.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::char_system::{CharSystem, CoefficientSet};
use crate::error::{Error, Result};
use crate::fbm::{sample_fbm, FbmConfig, FbmMethod};
use crate::frac_calc::{
    frac_integral_left, weyl_derivative_left, weyl_derivative_left_corrected, weyl_derivative_right, FracOrder,
};
use crate::integrators::{ito_integral_with, young_fractional, young_riemann, EvalPoint, IntegrandSpec, MalliavinKernel};
use crate::linear_quasi::{solve_linear_explicit, solve_quasilinear, QuasilinearCoeffs, TimeFn};
use crate::mc::Experiment;
use crate::picard::{solve_fixed_point, ContractionProblem, LinearOdeMap};
use crate::quad::ls_slope;
use crate::time_grid::{fmt17, HolderExponent, Kernel, SampledPath, TimeGrid};

#[derive(Debug, Parser)]
#[command(name = "fracsde", version, about = "Simulation and SDE solvers driven by fractional Brownian motion")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample an fBm path to CSV.
    Fbm {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "cholesky")]
        method: String,
    },
    /// Fractional integral or Weyl derivative of a path.
    Frac {
        #[arg(value_enum)]
        op: FracOp,
        #[arg(long)]
        alpha: f64,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Remove the start-point singularity before differentiating (dleft only).
        #[arg(long)]
        corrected: bool,
    },
    /// Integral of one path against another.
    Integrate {
        #[arg(long, value_enum)]
        method: IntegrateMethod,
        #[arg(long)]
        f: PathBuf,
        #[arg(long)]
        g: PathBuf,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long, value_enum, default_value = "zero")]
        malliavin: MalliavinChoice,
        #[arg(long, default_value = "mid")]
        eval: String,
        #[arg(long)]
        from: Option<f64>,
        #[arg(long)]
        to: Option<f64>,
        /// Hurst index of the integrator (ito only).
        #[arg(long, default_value_t = 0.75)]
        hurst: f64,
        /// Hölder exponent asserted for both paths.
        #[arg(long)]
        beta: Option<f64>,
    },
    /// Closed-form solution of `dx = (β₁x + β₀)dt + (a₁x + a₀)dB`.
    SolveLinear {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        beta1: f64,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        beta0: f64,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        a1: f64,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        a0: f64,
        #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
        x0: f64,
    },
    /// Quasilinear equation from a JSON coefficient file.
    SolveQuasilinear {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        coeff_file: PathBuf,
        #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
        eta: f64,
    },
    /// General equation through the characteristic system.
    SolveNonlinear {
        #[command(flatten)]
        common: Common,
        /// linear:B,A | sine:C | logistic:EPS
        #[arg(long)]
        coeff: String,
        #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
        eta: f64,
        /// Comma-separated output times (grid nodes).
        #[arg(long, value_delimiter = ',')]
        times: Vec<f64>,
    },
    /// Monte Carlo check of a distributional identity; prints a JSON report.
    Mc {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        experiment: String,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
    },
    /// Error against a reference under grid refinement.
    Convergence {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        experiment: Study,
        /// Comma-separated step counts, each doubling the previous one.
        #[arg(long, value_delimiter = ',', default_value = "256,512,1024,2048")]
        levels: Vec<usize>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FracOp {
    Ileft,
    Dleft,
    Dright,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum IntegrateMethod {
    Riemann,
    Fractional,
    Ito,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MalliavinChoice {
    Zero,
    Indicator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Study {
    YoungMethods,
    LinearOracle,
    PicardOde,
}

/// Flags shared by every simulation command. Unset flags fall back to the
/// JSON file given by `--config`, then to the defaults of [`RunConfig`].
#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub hurst: Option<f64>,
    #[arg(long)]
    pub horizon: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Read the driving path from CSV instead of sampling it.
    #[arg(long)]
    pub driver: Option<PathBuf>,
}

/// The common parameter block after merging flags, file and defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub hurst: f64,
    pub horizon: f64,
    pub steps: usize,
    pub seed: u64,
    pub beta: Option<f64>,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { hurst: 0.75, horizon: 1.0, steps: 1024, seed: 42, beta: None, out: None }
    }
}

impl RunConfig {
    pub fn resolve(common: &Common) -> Result<Self> {
        let mut cfg = match &common.config {
            Some(path) => serde_json::from_reader(BufReader::new(File::open(path)?))?,
            None => RunConfig::default(),
        };
        if let Some(v) = common.hurst {
            cfg.hurst = v;
        }
        if let Some(v) = common.horizon {
            cfg.horizon = v;
        }
        if let Some(v) = common.steps {
            cfg.steps = v;
        }
        if let Some(v) = common.seed {
            cfg.seed = v;
        }
        if common.beta.is_some() {
            cfg.beta = common.beta;
        }
        if common.out.is_some() {
            cfg.out = common.out.clone();
        }
        Kernel::new(cfg.hurst)?;
        cfg.holder()?;
        TimeGrid::new(cfg.horizon, cfg.steps)?;
        if !cfg.steps.is_power_of_two() {
            eprintln!("warning: {} steps is not a power of two; refinement studies assume doubling", cfg.steps);
        }
        Ok(cfg)
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.horizon, self.steps)
    }

    pub fn holder(&self) -> Result<HolderExponent> {
        match self.beta {
            Some(b) => HolderExponent::for_driver(b, self.hurst),
            None => Ok(HolderExponent::default_for(self.hurst)),
        }
    }

    fn fbm(&self, method: FbmMethod) -> Result<SampledPath> {
        sample_fbm(&FbmConfig::new(self.hurst, self.grid()?, self.seed)?.with_method(method))
    }

    /// Driver from `--driver` when given, otherwise a fresh fBm sample.
    fn driver(&self, common: &Common) -> Result<SampledPath> {
        match &common.driver {
            Some(path) => read_path(path),
            None => self.fbm(FbmMethod::Cholesky),
        }
    }
}

fn read_path(path: &Path) -> Result<SampledPath> {
    SampledPath::read_csv(BufReader::new(File::open(path)?))
}

fn sink(out: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn write_path(path: &SampledPath, out: Option<&Path>) -> Result<()> {
    path.write_csv(sink(out)?)
}

fn write_json(value: &impl Serialize, out: Option<&Path>) -> Result<()> {
    let mut w = sink(out)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// `linear:B,A`, `sine:C` or `logistic:EPS`.
pub fn parse_family(spec: &str) -> Result<CoefficientSet> {
    let (name, args) = spec.split_once(':').unwrap_or((spec, ""));
    let nums: Vec<f64> = if args.is_empty() {
        Vec::new()
    } else {
        args.split(',')
            .map(|s| s.trim().parse::<f64>().map_err(|_| Error::domain(format!("bad number `{s}` in `{spec}`"))))
            .collect::<Result<_>>()?
    };
    match (name, nums.as_slice()) {
        ("linear", [b, a]) => Ok(CoefficientSet::linear(*b, *a)),
        ("sine", [c]) => Ok(CoefficientSet::sine(*c)),
        ("sine", []) => Ok(CoefficientSet::sine(1.0)),
        ("logistic", [e]) => Ok(CoefficientSet::logistic(*e)),
        _ => Err(Error::domain(format!("unknown coefficient family `{spec}` (linear:B,A | sine:C | logistic:EPS)"))),
    }
}

#[derive(Debug, Serialize)]
struct IntegralReport {
    method: &'static str,
    from: f64,
    to: f64,
    value: f64,
}

/// One row of a refinement table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub steps: usize,
    pub dt: f64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceTable {
    pub experiment: Study,
    pub rows: Vec<ConvergenceRow>,
    /// Least-squares slope of `log error` against `log dt`.
    pub order: f64,
}

/// Errors for a doubling sequence of step counts against the reference of
/// each study: `young-methods` compares the fractional and Riemann forms of
/// `∫B dB`, `linear-oracle` the closed-form linear solver with the lognormal
/// solution, `picard-ode` the fixed point of `x = 1 + ∫x` with `e^t`.
pub fn convergence_study(study: Study, levels: &[usize], cfg: &RunConfig) -> Result<ConvergenceTable> {
    if levels.len() < 3 {
        return Err(Error::domain(format!("a refinement study needs at least 3 levels, got {}", levels.len())));
    }
    if levels.windows(2).any(|w| w[1] != 2 * w[0]) {
        return Err(Error::domain("refinement levels must double"));
    }
    let finest = *levels.last().expect("non-empty");
    let fine_grid = TimeGrid::new(cfg.horizon, finest)?;
    let beta = cfg.holder()?;
    let kernel = Kernel::new(cfg.hurst)?;
    let fine = match study {
        Study::PicardOde => SampledPath::zeros(fine_grid),
        _ => sample_fbm(&FbmConfig::new(cfg.hurst, fine_grid, cfg.seed)?)?,
    };
    let mut rows = Vec::with_capacity(levels.len());
    for &n in levels {
        let b = fine.subsample(finest / n)?;
        let grid = *b.grid();
        let t = grid.horizon();
        let error = match study {
            Study::YoungMethods => {
                let f = IntegrandSpec::new(b.clone(), beta);
                let frac = young_fractional(&f, &b, beta, 0.0, t, None)?;
                let mid = young_riemann(&f, &b, 0.0, t, EvalPoint::Mid)?;
                (frac - mid).abs() / mid.abs().max(f64::MIN_POSITIVE)
            }
            Study::LinearOracle => {
                let (drift, vol) = (0.1, 0.5);
                let zero = TimeFn::constant(0.0);
                let x = solve_linear_explicit(&TimeFn::constant(drift), &zero, &TimeFn::constant(vol), &zero, 1.0, &b, &kernel)?;
                let exact = (drift * t + vol * b.last() - 0.5 * vol * vol * t.powf(2.0 * cfg.hurst)).exp();
                (x.last() - exact).abs() / exact
            }
            Study::PicardOde => {
                let problem = ContractionProblem::new(1.0, 1.0, HolderExponent::new(1.0)?, t, 1.0)?;
                let rep = solve_fixed_point(&mut LinearOdeMap::new(1.0, 1.0, &grid), &problem, &grid, 1e-13, 200)?;
                (rep.solution[n] - t.exp()).abs()
            }
        };
        rows.push(ConvergenceRow { steps: n, dt: grid.dt(), error });
    }
    let x: Vec<f64> = rows.iter().map(|r| r.dt.ln()).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.error.max(f64::MIN_POSITIVE).ln()).collect();
    Ok(ConvergenceTable { experiment: study, order: ls_slope(&x, &y), rows })
}

fn configure_threads() {
    #[cfg(feature = "parallel")]
    if let Some(n) = std::env::var("FRACSDE_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    configure_threads();
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Fbm { common, method } => {
            let cfg = RunConfig::resolve(&common)?;
            let path = cfg.fbm(method.parse()?)?;
            write_path(&path, cfg.out.as_deref())
        }
        Command::Frac { op, alpha, input, out, corrected } => {
            let f = read_path(&input)?;
            let alpha = FracOrder::new(alpha)?;
            let end = f.grid().horizon();
            let result = match op {
                FracOp::Ileft => frac_integral_left(&f, alpha, 0.0)?,
                FracOp::Dleft if corrected => weyl_derivative_left_corrected(&f, alpha, 0.0)?.into_path()?,
                FracOp::Dleft => weyl_derivative_left(&f, alpha, 0.0)?.into_path()?,
                FracOp::Dright => weyl_derivative_right(&f, alpha, end)?.into_path()?,
            };
            write_path(&result, out.as_deref())
        }
        Command::Integrate { method, f, g, alpha, malliavin, eval, from, to, hurst, beta } => {
            let fp = read_path(&f)?;
            let gp = read_path(&g)?;
            let beta = match beta {
                Some(b) => HolderExponent::for_driver(b, hurst)?,
                None => HolderExponent::default_for(hurst),
            };
            let a = from.unwrap_or(0.0);
            let b = to.unwrap_or(gp.grid().horizon());
            let kernel = match malliavin {
                MalliavinChoice::Zero => MalliavinKernel::Zero,
                MalliavinChoice::Indicator => MalliavinKernel::Indicator { factor: None },
            };
            let spec = IntegrandSpec::new(fp, beta).with_malliavin(kernel);
            let (name, value) = match method {
                IntegrateMethod::Riemann => ("riemann", young_riemann(&spec, &gp, a, b, eval.parse()?)?),
                IntegrateMethod::Fractional => {
                    let order = alpha.map(FracOrder::new).transpose()?;
                    ("fractional", young_fractional(&spec, &gp, beta, a, b, order)?)
                }
                IntegrateMethod::Ito => {
                    ("ito", ito_integral_with(&spec, &gp, &Kernel::new(hurst)?, a, b, eval.parse()?)?)
                }
            };
            write_json(&IntegralReport { method: name, from: a, to: b, value }, None)
        }
        Command::SolveLinear { common, beta1, beta0, a1, a0, x0 } => {
            let cfg = RunConfig::resolve(&common)?;
            let b = cfg.driver(&common)?;
            let c = |v| TimeFn::constant(v);
            let x = solve_linear_explicit(&c(beta1), &c(beta0), &c(a1), &c(a0), x0, &b, &Kernel::new(cfg.hurst)?)?;
            write_path(&x, cfg.out.as_deref())
        }
        Command::SolveQuasilinear { common, coeff_file, eta } => {
            let cfg = RunConfig::resolve(&common)?;
            let coeffs: QuasilinearCoeffs = serde_json::from_reader(BufReader::new(File::open(&coeff_file)?))?;
            let b = cfg.driver(&common)?;
            let x = solve_quasilinear(&coeffs, eta, &b, &Kernel::new(cfg.hurst)?)?;
            write_path(&x, cfg.out.as_deref())
        }
        Command::SolveNonlinear { common, coeff, eta, times } => {
            let cfg = RunConfig::resolve(&common)?;
            let coeffs = parse_family(&coeff)?;
            let b = cfg.driver(&common)?;
            let times = if times.is_empty() { vec![b.grid().horizon()] } else { times };
            let sys = CharSystem::new(coeffs, Kernel::new(cfg.hurst)?, cfg.holder()?)?;
            let comp = sys.compose_solution(eta, &b, &times)?;
            let mut w = csv::Writer::from_writer(sink(cfg.out.as_deref())?);
            w.write_record(["t", "value"])?;
            for (t, v) in comp.times.iter().zip(&comp.values) {
                w.write_record([fmt17(*t), fmt17(*v)])?;
            }
            w.flush()?;
            match comp.horizon {
                None => Ok(()),
                Some(event) => {
                    eprintln!("a priori invertibility scale: {:.4}", comp.theoretical_horizon);
                    Err(event.into())
                }
            }
        }
        Command::Mc { common, experiment, samples } => {
            let cfg = RunConfig::resolve(&common)?;
            let exp: Experiment = experiment.parse()?;
            let report = exp.run(samples, cfg.seed, cfg.hurst, cfg.grid()?)?;
            write_json(&report, cfg.out.as_deref())
        }
        Command::Convergence { common, experiment, levels } => {
            let cfg = RunConfig::resolve(&common)?;
            let table = convergence_study(experiment, &levels, &cfg)?;
            write_json(&table, cfg.out.as_deref())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn families_parse() {
        assert_eq!(parse_family("linear:0.1,0.5").unwrap().name, "linear(0.1, 0.5)");
        assert!(parse_family("sine:2").is_ok());
        assert!(parse_family("logistic:0.2").is_ok());
        assert!(parse_family("cubic:1").is_err());
        assert!(parse_family("linear:1").is_err());
    }

    #[test]
    fn config_merging_prefers_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, r#"{"hurst": 0.8, "steps": 64, "seed": 7}"#).unwrap();
        let common = Common { config: Some(path), seed: Some(9), ..Common::default() };
        let cfg = RunConfig::resolve(&common).unwrap();
        assert_eq!((cfg.hurst, cfg.steps, cfg.seed, cfg.horizon), (0.8, 64, 9, 1.0));

        let bad = Common { hurst: Some(0.4), ..Common::default() };
        assert!(matches!(RunConfig::resolve(&bad), Err(Error::Domain(_))));
        let beta_too_big = Common { beta: Some(0.9), ..Common::default() };
        assert!(RunConfig::resolve(&beta_too_big).is_err());
    }

    #[test]
    fn study_needs_three_levels() {
        let cfg = RunConfig::default();
        assert!(convergence_study(Study::PicardOde, &[64, 128], &cfg).is_err());
        let t = convergence_study(Study::PicardOde, &[64, 128, 256], &cfg).unwrap();
        assert!(t.rows.windows(2).all(|w| w[1].error < w[0].error));
        assert!(t.order > 0.9, "order {}", t.order);
    }

    #[test]
    fn unknown_flags_exit_with_one() {
        assert_eq!(dispatch(["fracsde", "fbm", "--bogus"]), 1);
        assert_eq!(dispatch(["fracsde", "frobnicate"]), 1);
    }
}
