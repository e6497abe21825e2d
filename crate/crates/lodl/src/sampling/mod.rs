//! Oracle sampling: perturb each training label, re-solve the decision
//! problem at the perturbed point, and record how much decision quality the
//! perturbation costs. One table row per instance holds the truth quality and
//! one quality value per sample.
//!
//! Perturbations are not stored. Every sample's noise comes from an RNG
//! stream keyed by `(seed, instance id, sample index)`, so any consumer can
//! regenerate the exact perturbed label later, and the table is bit-identical
//! no matter how many worker threads produced it.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domains::{Dataset, DecisionProblem, DomainError, Instance, Split};
use crate::rng::stream;

mod io;

pub use io::{read_sample_table, write_sample_table, SampleIoError, SAMPLE_MAGIC};

#[derive(Debug, Error)]
pub enum SampleError {
    #[error("invalid sampler config: {0}")]
    Config(String),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

/// How many label coordinates each sample may move.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbStrategy {
    /// Gaussian noise on every coordinate.
    All,
    /// Gaussian noise on one uniformly drawn coordinate.
    One,
    /// Gaussian noise on two distinct uniformly drawn coordinates.
    Two,
}

impl PerturbStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            PerturbStrategy::All => "all",
            PerturbStrategy::One => "one",
            PerturbStrategy::Two => "two",
        }
    }
}

impl std::str::FromStr for PerturbStrategy {
    type Err = SampleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "all" => Ok(PerturbStrategy::All),
            "one" => Ok(PerturbStrategy::One),
            "two" => Ok(PerturbStrategy::Two),
            other => Err(SampleError::Config(format!(
                "unknown perturbation strategy '{other}', expected all, one, or two"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleConfig {
    pub strategy: PerturbStrategy,
    /// Noise scale; the label-space standard deviation per moved coordinate.
    pub alpha: f64,
    /// Samples per instance. The oracle runs `k + 1` times per instance, the
    /// extra call being the unperturbed truth.
    pub k: usize,
    pub seed: u64,
}

impl SampleConfig {
    /// Noise scales matched to each domain's label magnitudes: utilities span
    /// a few units, click rates and returns live well inside (-1, 1).
    pub fn default_alpha(domain: &str) -> f64 {
        match domain {
            "linear" => 1.0,
            _ => 0.05,
        }
    }

    pub fn for_domain(domain: &str, seed: u64) -> SampleConfig {
        SampleConfig {
            strategy: PerturbStrategy::All,
            alpha: SampleConfig::default_alpha(domain),
            k: 5000,
            seed,
        }
    }

    fn validate(&self, dim_y: usize) -> Result<(), SampleError> {
        if !(self.alpha > 0.0) {
            return Err(SampleError::Config("alpha must be positive".into()));
        }
        if self.k == 0 {
            return Err(SampleError::Config("need at least one sample".into()));
        }
        if self.strategy == PerturbStrategy::Two && dim_y < 2 {
            return Err(SampleError::Config(
                "two-coordinate perturbation needs at least two label dims".into(),
            ));
        }
        Ok(())
    }
}

/// The noise vector sample `index` adds to instance `instance_id`'s label.
pub fn perturbation(
    config: &SampleConfig,
    instance_id: u64,
    index: usize,
    dim_y: usize,
) -> Vec<f64> {
    let mut rng = stream(config.seed, "perturb", &[instance_id, index as u64]);
    let mut delta = vec![0.0; dim_y];
    match config.strategy {
        PerturbStrategy::All => {
            for d in delta.iter_mut() {
                let g: f64 = StandardNormal.sample(&mut rng);
                *d = config.alpha * g;
            }
        }
        PerturbStrategy::One => {
            let i = rng.gen_range(0..dim_y);
            let g: f64 = StandardNormal.sample(&mut rng);
            delta[i] = config.alpha * g;
        }
        PerturbStrategy::Two => {
            let i = rng.gen_range(0..dim_y);
            let mut j = rng.gen_range(0..dim_y);
            while j == i {
                j = rng.gen_range(0..dim_y);
            }
            let gi: f64 = StandardNormal.sample(&mut rng);
            let gj: f64 = StandardNormal.sample(&mut rng);
            delta[i] = config.alpha * gi;
            delta[j] = config.alpha * gj;
        }
    }
    delta
}

/// Label of sample `index`: the true label plus its perturbation.
pub fn perturbed_label(
    config: &SampleConfig,
    y: &[f64],
    instance_id: u64,
    index: usize,
) -> Vec<f64> {
    let delta = perturbation(config, instance_id, index, y.len());
    y.iter().zip(&delta).map(|(a, b)| a + b).collect()
}

/// Sampled decision qualities for one instance.
#[derive(Clone, Debug, PartialEq)]
pub struct InstanceSamples {
    pub instance_id: u64,
    /// Quality of acting on the unperturbed label.
    pub dq_truth: f64,
    /// Quality of acting on each perturbed label, in sample order.
    pub dq: Vec<f64>,
}

impl InstanceSamples {
    /// Regret targets for loss fitting: how much quality each sample's
    /// decisions give up against the truth. Nonnegative up to solver
    /// tolerance; tiny negative values are clipped.
    pub fn targets(&self) -> Vec<f64> {
        self.dq.iter().map(|d| (self.dq_truth - d).max(0.0)).collect()
    }
}

/// A full sampling run over one dataset split.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleTable {
    pub domain: String,
    pub config: SampleConfig,
    pub instances: Vec<InstanceSamples>,
}

impl SampleTable {
    pub fn by_id(&self, instance_id: u64) -> Option<&InstanceSamples> {
        self.instances.iter().find(|i| i.instance_id == instance_id)
    }
}

/// Runs the oracle `k + 1` times for one instance: once on the truth, then
/// once per perturbed label, warm-starting each solve from the truth decision.
pub fn sample_instance(
    problem: &dyn DecisionProblem,
    config: &SampleConfig,
    instance: &Instance,
) -> Result<InstanceSamples, SampleError> {
    config.validate(problem.dim_y())?;
    let y = &instance.y;
    let z_truth = problem.solve_exact(y)?;
    let dq_truth = problem.objective(&z_truth, y)?;
    let mut dq = Vec::with_capacity(config.k);
    for index in 0..config.k {
        let ytilde = perturbed_label(config, y, instance.id, index);
        let z = problem.solve_exact_warm(&ytilde, Some(&z_truth))?;
        dq.push(problem.objective(&z, y)?);
    }
    Ok(InstanceSamples {
        instance_id: instance.id,
        dq_truth,
        dq,
    })
}

/// Samples every instance of `split`, in parallel over instances.
pub fn sample_dataset(
    problem: &dyn DecisionProblem,
    config: &SampleConfig,
    dataset: &Dataset,
    split: Split,
) -> Result<SampleTable, SampleError> {
    config.validate(problem.dim_y())?;
    let instances: Vec<&Instance> = dataset.split(split).collect();
    let sampled: Result<Vec<InstanceSamples>, SampleError> = instances
        .par_iter()
        .map(|inst| sample_instance(problem, config, inst))
        .collect();
    Ok(SampleTable {
        domain: dataset.config.name().to_string(),
        config: config.clone(),
        instances: sampled?,
    })
}
