//! Deflator-based no-arbitrage numerics for finite market models.
//!
//! The crate turns the multiplicative-deflator view of no-arbitrage into
//! executable checks and pricing tools:
//!
//! - [`market`]: the data model — parametric continuous-time markets with
//!   piecewise-constant coefficients, savings accounts, and exact-rational
//!   scenario trees, with JSON ingestion and validation.
//! - [`sde`]: deterministic seeded simulation (log-exact stochastic
//!   exponentials, exact squared-Bessel(4) transitions, a generic Euler
//!   fallback) and statistical martingale tests.
//! - [`deflator`]: construction or refutation of deflators of the form
//!   `Z = D B^-1` for continuous markets, and exact multiplicative
//!   decomposition on trees.
//! - [`arbitrage`]: the discrete no-arbitrage dichotomy decided by an exact
//!   rational simplex, with self-verifying certificates, plus an
//!   enumeration-based oracle.
//! - [`pricing`]: real-world, risk-neutral and forward pricing on paths and
//!   trees, and the strict-local-martingale bond-gap experiment.
//! - [`portfolio`]: self-financing and dynamic strategies, P&L accounting,
//!   and the mean self-financing construction.
//!
//! Everything random is keyed by `(seed, stream, path)` counters, so results
//! are reproducible bit for bit on any machine at any parallelism.

pub mod arbitrage;
pub mod deflator;
pub mod error;
pub mod instances;
pub mod lp;
pub mod market;
pub mod portfolio;
pub mod pricing;
pub mod rat;
pub mod rng;
pub mod sde;
pub mod stats;

pub use error::{Error, Result};

/// Default seed used by the command line tools; fixed, never time-based.
pub const DEFAULT_SEED: u64 = 1729;
/// Default Monte Carlo sample count.
pub const DEFAULT_N_PATHS: usize = 100_000;
/// Default confidence multiplier for the statistical tests.
pub const DEFAULT_CONFIDENCE: f64 = 3.0;
/// Default grid refinement for compact single-cell market files.
pub const DEFAULT_GRID_CELLS: usize = 64;
