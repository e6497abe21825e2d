//! Learned task-specific decision losses for predict-then-optimize pipelines.
//!
//! The pipeline this crate implements: a predictive model maps features to the
//! parameters of an optimization problem, the problem is solved, and the
//! realized objective under the true parameters is what we care about. Instead
//! of differentiating through the solver during model training, the crate
//! samples the solver once around each training label, fits a cheap convex
//! loss per instance to the sampled decision losses, and then trains the
//! predictive model against those fitted losses with no further solver calls.
//!
//! Modules, in dependency order:
//!
//! * [`autodiff`] - minimal reverse-mode tape over dense `f64` tensors
//! * [`domains`] - the three benchmark decision problems and their data generators
//! * [`sampling`] - label perturbation strategies and sampled decision-loss tables
//! * [`losses`] - the learnable loss families and their fitting routines
//! * [`models`] - predictive models and the three training regimes
//! * [`harness`] - experiment grid, normalization, diagnostics, benchmarks

pub mod autodiff;
pub mod domains;
pub mod harness;
pub mod losses;
pub mod models;
pub mod sampling;

mod rng;

pub use rng::stream;
