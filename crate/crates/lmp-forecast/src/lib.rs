//! Probabilistic short-term forecasting of locational marginal prices.
//!
//! The crate models real-time price formation in a DC network as an
//! optimization problem whose right-hand side moves with stochastic nodal
//! injections. Offline, the parameter space is partitioned into polyhedral
//! critical regions on which prices are constant (linear costs) or affine
//! (quadratic costs); online, forecast distributions come from Monte Carlo
//! over a conditional law of the injections, with region lookups replacing
//! almost all optimization solves.
//!
//! Pipeline, bottom to top:
//! - [`network`]: case files, schedules, contingencies, shift factors.
//! - [`solver`]: dense active-set LP/QP kernels with exact duals.
//! - [`opf`]: single-shot dispatch, prices, congestion patterns.
//! - [`polytope`]: halfspace polytopes — reduction, centers, vertices.
//! - [`mpp`]: the multiparametric program, critical regions, enumeration,
//!   and the demand-driven region cache.
//! - [`stochastic`]: conditional laws of the uncertain injections.
//! - [`forecast`]: region-probability forecasts via importance sampling.
//! - [`evaluation`]: Brier scores, reliability diagrams, baselines.

pub mod error;
pub mod evaluation;
pub mod forecast;
pub mod mpp;
pub mod network;
pub mod opf;
pub mod par;
pub mod polytope;
pub mod solver;
pub mod stochastic;

pub use error::{Error, Result};
pub use par::ExecMode;
