//! The three benchmark decision problems: top-k resource allocation on a
//! cubic utility curve, budgeted website advertising with a submodular click
//! objective, and risk-adjusted portfolio allocation.
//!
//! Each domain provides a synthetic data generator, an exact optimization
//! oracle, and a differentiable surrogate solver that runs on an
//! [`autodiff::Tape`](crate::autodiff::Tape). Oracle and surrogate calls are
//! pure functions of their inputs and bump per-problem call counters.

mod io;
mod linear;
mod portfolio;
mod webadv;

pub use io::{read_dataset, write_dataset, DataIoError, DATASET_FORMAT};
pub use linear::{cubic_utility, gen_linear_dataset, soft_topk, topk_oracle, LinearConfig, TopK};
pub use portfolio::{
    gen_portfolio_dataset, PortfolioConfig, PortfolioProblem, PORTFOLIO_FEAT_DIM,
};
pub use webadv::{
    enumerate_subsets, gen_webadv_dataset, webadv_objective, WebAdvConfig, WebAdvProblem,
};

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AdError, Tape, Var};

#[derive(Debug, Error)]
pub enum DomainError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("dimension mismatch: expected {expected}, got {got} in {what}")]
    Dim {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("value out of range in {what}: {value}")]
    Range { what: &'static str, value: f64 },
    #[error("subset enumeration over {0} websites refused (limit 20)")]
    EnumerationTooLarge(usize),
    #[error("solver hit the iteration cap with residual {residual:e} (tolerance {tol:e})")]
    SolverStalled { residual: f64, tol: f64 },
    #[error("non-finite value in solver iterates")]
    NanInIterates,
    #[error(transparent)]
    Ad(#[from] AdError),
}

/// Which split an instance belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// One supervised example: per-item features and the true label vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub id: u64,
    pub split: Split,
    /// Row-major `[n_items, feat_dim]`.
    pub features: Vec<f64>,
    pub n_items: usize,
    pub feat_dim: usize,
    pub y: Vec<f64>,
}

impl Instance {
    pub fn features_of(&self, item: usize) -> &[f64] {
        &self.features[item * self.feat_dim..(item + 1) * self.feat_dim]
    }
}

/// Generated dataset plus everything needed to rebuild its decision problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub config: DomainConfig,
    pub seed: u64,
    pub instances: Vec<Instance>,
    /// Stock correlation matrix, flat row-major; portfolio datasets only.
    pub q: Option<Vec<f64>>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &Instance> {
        self.instances.iter().filter(move |i| i.split == split)
    }

    pub fn problem(&self) -> Result<Box<dyn DecisionProblem>, DomainError> {
        self.config.problem(self.q.as_deref())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "domain", rename_all = "snake_case")]
pub enum DomainConfig {
    Linear(LinearConfig),
    WebAdv(WebAdvConfig),
    Portfolio(PortfolioConfig),
}

impl DomainConfig {
    pub fn name(&self) -> &'static str {
        match self {
            DomainConfig::Linear(_) => "linear",
            DomainConfig::WebAdv(_) => "webadv",
            DomainConfig::Portfolio(_) => "portfolio",
        }
    }

    pub fn generate(&self, seed: u64) -> Result<Dataset, DomainError> {
        match self {
            DomainConfig::Linear(c) => gen_linear_dataset(c, seed),
            DomainConfig::WebAdv(c) => gen_webadv_dataset(c, seed),
            DomainConfig::Portfolio(c) => gen_portfolio_dataset(c, seed),
        }
    }

    /// Builds the decision problem; portfolio configs need the dataset's Q.
    pub fn problem(&self, q: Option<&[f64]>) -> Result<Box<dyn DecisionProblem>, DomainError> {
        match self {
            DomainConfig::Linear(c) => Ok(Box::new(TopK::new(c)?)),
            DomainConfig::WebAdv(c) => Ok(Box::new(WebAdvProblem::new(c)?)),
            DomainConfig::Portfolio(c) => {
                let q = q.ok_or_else(|| {
                    DomainError::Config("portfolio problem needs a correlation matrix".into())
                })?;
                Ok(Box::new(PortfolioProblem::new(c, q.to_vec())?))
            }
        }
    }
}

/// Exact and surrogate solve counts for one problem value.
#[derive(Debug, Default)]
pub struct OracleCounters {
    exact: AtomicU64,
    surrogate: AtomicU64,
}

impl OracleCounters {
    pub fn bump_exact(&self) {
        self.exact.fetch_add(1, Ordering::Relaxed);
    }

    pub fn bump_surrogate(&self) {
        self.surrogate.fetch_add(1, Ordering::Relaxed);
    }

    pub fn exact_calls(&self) -> u64 {
        self.exact.load(Ordering::Relaxed)
    }

    pub fn surrogate_calls(&self) -> u64 {
        self.surrogate.load(Ordering::Relaxed)
    }
}

/// A parameterized optimization problem with an exact oracle and a
/// tape-differentiable surrogate. Decisions are dense vectors: indicator
/// vectors for the discrete domains, allocations for the continuous one.
pub trait DecisionProblem: Send + Sync {
    /// Length of the label / prediction vector.
    fn dim_y(&self) -> usize;

    /// Length of a decision vector.
    fn dim_z(&self) -> usize;

    /// Exact argmax decision for the given predicted parameters.
    fn solve_exact(&self, yhat: &[f64]) -> Result<Vec<f64>, DomainError>;

    /// Exact solve with an optional starting point for iterative oracles.
    fn solve_exact_warm(
        &self,
        yhat: &[f64],
        _hint: Option<&[f64]>,
    ) -> Result<Vec<f64>, DomainError> {
        self.solve_exact(yhat)
    }

    /// Realized objective of decision `z` under true parameters `y`. Higher is
    /// better in every domain.
    fn objective(&self, z: &[f64], y: &[f64]) -> Result<f64, DomainError>;

    /// Differentiable relaxed solve; returns a fractional decision on the tape.
    fn solve_surrogate(&self, tape: &mut Tape, yhat: Var) -> Result<Var, DomainError>;

    /// The objective expressed in tape ops, with `y` held constant.
    fn objective_on_tape(&self, tape: &mut Tape, z: Var, y: &[f64]) -> Result<Var, DomainError>;

    fn counters(&self) -> &OracleCounters;

    /// Objective realized by acting on `yhat` while nature plays `y`.
    fn decision_quality(&self, yhat: &[f64], y: &[f64]) -> Result<f64, DomainError> {
        let z = self.solve_exact(yhat)?;
        self.objective(&z, y)
    }
}

/// Exact Euclidean projection onto `{0 <= z <= 1, sum z <= budget}`.
///
/// Clamps into the box first; if the budget is then exceeded, finds the
/// threshold `tau` with `sum(clamp01(v - tau)) = budget` by bisecting the
/// sorted breakpoints of that piecewise-linear function, which is exact up to
/// float rounding.
pub fn project_capped_simplex(v: &[f64], budget: f64) -> Vec<f64> {
    match capped_simplex_tau(v, budget) {
        None => v.iter().map(|&x| x.clamp(0.0, 1.0)).collect(),
        Some(tau) => v.iter().map(|&x| (x - tau).clamp(0.0, 1.0)).collect(),
    }
}

/// The shift `tau` solving `sum clamp01(v - tau) = budget`, or `None` when
/// plain clamping already fits the budget. `phi(tau)` is piecewise linear in
/// `tau` with kinks only where some `v_i - tau` crosses 0 or 1, so linear
/// interpolation between adjacent breakpoints is exact.
pub(crate) fn capped_simplex_tau(v: &[f64], budget: f64) -> Option<f64> {
    let total: f64 = v.iter().map(|&x| x.clamp(0.0, 1.0)).sum();
    if total <= budget {
        return None;
    }
    let phi = |tau: f64| -> f64 { v.iter().map(|&x| (x - tau).clamp(0.0, 1.0)).sum() };
    let mut bps: Vec<f64> = Vec::with_capacity(2 * v.len());
    for &x in v {
        bps.push(x);
        bps.push(x - 1.0);
    }
    bps.sort_by(|a, b| a.partial_cmp(b).unwrap());
    // phi is non-increasing in tau: find the last breakpoint with phi >= budget.
    let (mut lo, mut hi) = (0usize, bps.len() - 1);
    while lo + 1 < hi {
        let mid = (lo + hi) / 2;
        if phi(bps[mid]) >= budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (plo, phi_hi) = (phi(bps[lo]), phi(bps[hi]));
    if (plo - phi_hi).abs() < 1e-15 {
        Some(bps[lo])
    } else {
        Some(bps[lo] + (plo - budget) * (bps[hi] - bps[lo]) / (plo - phi_hi))
    }
}

/// Largest eigenvalue of a symmetric matrix by deterministic power iteration.
/// The start vector follows a golden-ratio sequence so it is never aligned
/// with (or orthogonal to) the structured eigenvectors common in practice.
pub fn lambda_max(a: &[f64], n: usize, iters: usize) -> f64 {
    debug_assert_eq!(a.len(), n * n);
    let mut x: Vec<f64> = (0..n)
        .map(|i| 0.5 + ((i as f64 + 1.0) * 0.618_033_988_749_895).fract())
        .collect();
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    for v in x.iter_mut() {
        *v /= norm;
    }
    let mut lam = 0.0;
    for _ in 0..iters {
        let mut y = vec![0.0; n];
        for r in 0..n {
            let mut acc = 0.0;
            for c in 0..n {
                acc += a[r * n + c] * x[c];
            }
            y[r] = acc;
        }
        let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        lam = x.iter().zip(&y).map(|(xi, yi)| xi * yi).sum();
        for (xi, yi) in x.iter_mut().zip(&y) {
            *xi = yi / norm;
        }
    }
    lam
}

/// Smallest eigenvalue via a spectral shift of [`lambda_max`].
pub fn lambda_min(a: &[f64], n: usize, iters: usize) -> f64 {
    let hi = lambda_max(a, n, iters).max(0.0) + 1.0;
    // lambda_max(hi*I - A) = hi - lambda_min(A)
    let mut shifted = vec![0.0; n * n];
    for r in 0..n {
        for c in 0..n {
            shifted[r * n + c] = -a[r * n + c] + if r == c { hi } else { 0.0 };
        }
    }
    hi - lambda_max(&shifted, n, iters)
}

/// `1 - relu(1 - relu(x))` expressed on the tape: clamps into `[0, 1]` with
/// zero gradient outside the box.
pub(crate) fn clamp01_on_tape(tape: &mut Tape, x: Var) -> Result<Var, AdError> {
    let one = tape.scalar_const(1.0);
    let r = tape.relu(x)?;
    let t = tape.sub(one, r)?;
    let rt = tape.relu(t)?;
    tape.sub(one, rt)
}
