//! Small-noise large deviations for Volterra-type stochastic volatility models.
//!
//! The log-price `Z` is driven by a volatility `σ(ε B̂)` where `B̂ = ∫ K(t,s) dB_s`
//! is a Volterra Gaussian process. This crate provides
//!
//! * [`kernels`]: the kernel catalog, covariance quadrature and the lift `f ↦ f̂`,
//! * [`model`]: drift/volatility catalog and assumption diagnostics,
//! * [`simulate`]: joint sampling of `(B, B̂, W)` and Euler schemes for `Z` and its
//!   frozen-volatility approximations,
//! * [`rate`]: discretized rate functionals (pathwise, terminal, barrier crossing)
//!   and their quasi-Newton minimization,
//! * [`mc`]: Monte-Carlo estimators with mean-shift importance sampling and
//!   decay-slope regression against the computed rates.

pub mod control;
pub mod error;
pub mod grid;
pub mod kernels;
pub mod mc;
pub mod model;
pub mod quadrature;
pub mod rate;
pub mod rng;
pub mod simulate;
pub mod stats;

pub use control::ControlFunction;
pub use error::{Error, Result};
pub use grid::Grid;
pub use kernels::{CellWeights, KernelFamily, KernelSpec, LiftedPath};
pub use mc::{EventSpec, ImportanceShift, McEstimate, ShiftMode, SlopeOptions, SlopeReport};
pub use model::{ModelSpec, ScalarFunction, SpeedSchedule};
pub use rate::{Objective, PathHypothesis, RateConfig, RateResult, RateSolver};
pub use simulate::{PathBundle, SimResult, VolterraMatrix};
