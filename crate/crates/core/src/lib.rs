//! Numerical toolkit for fractional Brownian motion with Hurst index `H > 1/2`.
//!
//! The crate covers path simulation, fractional integrals and Weyl
//! derivatives on sampled paths, pathwise (Young) and Wick-Itô stochastic
//! integrals, a Picard engine for progressive fixed-point problems in Hölder
//! spaces, and solvers for Itô SDEs driven by fBm:
//!
//! * [`char_system`] solves the characteristic system for deterministic
//!   coefficients and composes the solution through the inverse shift,
//! * [`linear_quasi`] handles quasilinear and linear equations with explicit
//!   shifts and integrating factors,
//! * [`mc`] turns distributional identities into Monte Carlo checks.
//!
//! Everything lives on uniform grids ([`time_grid::TimeGrid`]).

// `!(x > 0.0)` style checks are how NaN inputs get rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod char_system;
#[cfg(feature = "cli")]
pub mod cli;
pub mod error;
pub mod fbm;
pub mod frac_calc;
pub mod integrators;
pub mod linear_quasi;
pub mod mc;
pub mod picard;
pub mod quad;
pub mod time_grid;

pub use error::{Error, Result};
pub use time_grid::{HolderExponent, Kernel, SampledPath, TimeGrid};
