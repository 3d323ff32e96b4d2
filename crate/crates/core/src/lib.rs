//! Simulation and verification toolkit for non-increasing bivariate Markov
//! chains on `Z+ x {1..kappa}` and their scaling limits.
//!
//! The library is organised around the objects that appear on both sides of
//! the scaling limits:
//!
//! * [`measures`] — finite measures on `[0,1]`, their Laplace exponents,
//!   Q-matrices and stationary distributions;
//! * [`chain`] — generic simulation of the discrete chain `(X, J)` with
//!   absorption and type-change bookkeeping;
//! * [`lamperti`] — exact Lamperti time-changes of step paths and the
//!   discrete time-change used to compare chains with their limits;
//! * [`map`] — monotone Markov additive processes: simulation from
//!   characteristics, Lamperti transforms, exponential functionals;
//! * [`regimes`] — the critical / mixing / solo limit constructions and
//!   numerical hypothesis checkers;
//! * [`models`] — coalescents in varying environment and Markov random
//!   walks with a barrier, as concrete kernels with closed-form limits;
//! * [`diagnostics`] — empirical statistics turning simulations into
//!   convergence reports;
//! * [`fixtures`] — the built-in experiment catalog used by the CLI and
//!   the acceptance suite.

pub mod chain;
pub mod diagnostics;
pub mod error;
pub mod fixtures;
pub mod lamperti;
pub mod linalg;
pub mod map;
pub mod measures;
pub mod models;
pub mod quad;
pub mod regimes;
pub mod rng;

pub use chain::{ChainRunResult, RowEntry, SteppedPath, TransitionKernel};
pub use error::{Error, Result};
pub use lamperti::TimeChange;
pub use map::{MapCharacteristics, MapPath, SsmpPath};
pub use measures::{Density, FiniteMeasure, JumpMeasure, LaplaceExponent, QMatrix};
pub use regimes::{CriticalSpec, MixingSpec, Regime, SoloSpec};
pub use rng::{RngStream, StreamFamily};

/// Type index of the bivariate chain. Types are numbered `1..=kappa`;
/// `0` is the sentinel used after absorption or killing.
pub type TypeIdx = u32;

/// Sentinel type once the chain is absorbed or the MAP is killed.
pub const SENTINEL_TYPE: TypeIdx = 0;
