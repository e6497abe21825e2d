//! Experiment orchestration: method x seed x initialization grids with
//! shared sample tables and fitted losses, decision-quality normalization,
//! neighborhood error diagnostics, and the timing benchmarks.

use serde::Serialize;
use thiserror::Error;

use crate::domains::DomainError;
use crate::losses::{LossError, LossKind};
use crate::models::ModelError;
use crate::sampling::SampleError;

mod ablation;
mod bench;
mod experiment;
mod neighborhood;
mod report;

pub use ablation::{ablation_suite, AblationCell, AblationConfig};
pub use bench::{benchmark_amortization, benchmark_parallel, AmortizationReport, ParallelPoint};
pub use experiment::{
    random_baseline, random_range, run_experiment, CellFailure, ExperimentConfig, ExperimentResult,
};
pub use neighborhood::{
    mae_empirical_neighborhood, mae_gaussian_neighborhood, neighborhood_report, NeighborhoodReport,
    NeighborhoodRow,
};
pub use report::{ablation_csv, neighborhood_csv, runs_csv, summary_table, timings_json};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error("normalization references are degenerate: random {random_ref}, optimal {optimal_ref}")]
    Degenerate { random_ref: f64, optimal_ref: f64 },
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Sample(#[from] SampleError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("worker pool: {0}")]
    Pool(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// One column of the results table: a baseline or a training method.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    /// Uniform-random predictions; anchors normalized quality at 0.
    Random,
    /// True labels as predictions; anchors normalized quality at 1.
    Optimal,
    /// Squared-error training.
    TwoStage,
    /// Decision-focused training through the relaxed solver.
    Dfl,
    /// Training against fitted losses of the given family.
    Lodl(LossKind),
}

impl Method {
    /// Every method, baselines first, in the results-table column order.
    pub fn all() -> Vec<Method> {
        let mut methods = vec![Method::Random, Method::Optimal, Method::TwoStage, Method::Dfl];
        methods.extend(LossKind::ALL.map(Method::Lodl));
        methods
    }

    pub fn name(&self) -> &'static str {
        match self {
            Method::Random => "random",
            Method::Optimal => "optimal",
            Method::TwoStage => "2-stage",
            Method::Dfl => "dfl",
            Method::Lodl(kind) => kind.name(),
        }
    }

    /// Whether the method trains against fitted losses (and therefore needs
    /// a sample table).
    pub fn loss_family(&self) -> Option<LossKind> {
        match self {
            Method::Lodl(kind) => Some(*kind),
            _ => None,
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Method, String> {
        Method::all()
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Method::all().iter().map(|m| m.name()).collect();
                format!("unknown method {s:?}, expected one of: {}", names.join(", "))
            })
    }
}

/// Result of one grid cell: a method trained (or a baseline scored) under
/// one seed and one model initialization.
#[derive(Clone, Debug)]
pub struct RunRecord {
    pub domain: String,
    pub method: Method,
    pub seed: u64,
    pub init: usize,
    pub normalized_dq: f64,
    /// Mean raw decision quality on the test split.
    pub raw_dq: f64,
    /// Stage wall times in seconds. Shared artifacts (the sample table, a
    /// family's fitted losses) are charged to the first cell that
    /// materializes them; later cells see a cache hit and zero cost.
    pub t_sample: f64,
    pub t_fit: f64,
    pub t_train: f64,
    pub t_eval: f64,
    /// Exact oracle calls made materializing this cell's sample table.
    pub oracle_sample: u64,
    /// Oracle calls (exact + relaxed) made while training.
    pub oracle_train: u64,
    /// Exact oracle calls made scoring the test split.
    pub oracle_eval: u64,
}

/// Per-unit wall times behind the cost model: what one oracle call, one
/// relaxed solve, one loss fit, and one training step cost under this run.
#[derive(Clone, Debug, Serialize)]
pub struct TimingRecord {
    pub domain: String,
    pub seed: u64,
    /// Training steps per model.
    pub t_steps: usize,
    /// Samples per instance.
    pub k: usize,
    /// Training instances.
    pub n: usize,
    /// Mean seconds per training step of the loss-driven engine.
    pub t_model: f64,
    /// Mean seconds per exact oracle call during sampling.
    pub t_oracle: f64,
    /// Mean seconds per relaxed solve during decision-focused training.
    pub t_oracle_surrogate: f64,
    /// Mean seconds fitting one instance's loss.
    pub t_lodl: f64,
    pub workers: usize,
}

/// Mean decision quality rescaled so uniform-random predictions score 0
/// and truth predictions score 1.
pub fn normalize_dq(raw: &[f64], random_ref: f64, optimal_ref: f64) -> Result<f64, HarnessError> {
    if !(optimal_ref - random_ref).is_finite() || optimal_ref <= random_ref {
        return Err(HarnessError::Degenerate {
            random_ref,
            optimal_ref,
        });
    }
    let mean = raw.iter().sum::<f64>() / raw.len().max(1) as f64;
    Ok((mean - random_ref) / (optimal_ref - random_ref))
}

/// Pearson correlation of two equal-length series; 0 when either is
/// constant.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    if a.is_empty() {
        return 0.0;
    }
    let (ma, mb) = (
        a.iter().sum::<f64>() / n,
        b.iter().sum::<f64>() / n,
    );
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va <= 0.0 || vb <= 0.0 {
        return 0.0;
    }
    cov / (va * vb).sqrt()
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub(crate) fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests;
