//! Wall-clock benchmarks: sampling scalability across worker counts, and
//! how the one-time sampling plus fitting cost amortizes over many models.

use std::time::Instant;

use rand::Rng;

use crate::losses::{fit_split, FitConfig, LossKind};
use crate::models::{train_dfl, train_two_stage, train_with_lodl, TrainConfig};
use crate::sampling::{sample_dataset, SampleConfig};
use crate::domains::Split;

use super::experiment::{prepare_seed, ExperimentConfig};
use super::HarnessError;

/// Stage timings under one worker-pool size.
#[derive(Clone, Debug, serde::Serialize)]
pub struct ParallelPoint {
    pub workers: usize,
    pub sample_seconds: f64,
    pub fit_seconds: f64,
    /// Loss-driven training; single-threaded by construction.
    pub train_seconds: f64,
    /// Decision-focused training; serial in the solver loop.
    pub dfl_seconds: f64,
}

/// One-time cost of the sampled pipeline against per-model training cost,
/// for a growing number of models trained off the same fitted losses.
#[derive(Clone, Debug, serde::Serialize)]
pub struct AmortizationReport {
    pub domain: String,
    pub m: usize,
    /// Sampling plus fitting, paid once.
    pub fixed_seconds: f64,
    /// Wall time of each of the `m` trainings.
    pub train_seconds: Vec<f64>,
    /// (fixed + total training so far) / models so far, for 1..=m models.
    pub lodl_per_model: Vec<f64>,
    pub two_stage_seconds: f64,
    pub dfl_seconds: f64,
}

fn bench_family(cfg: &ExperimentConfig) -> LossKind {
    cfg.methods
        .iter()
        .find_map(super::Method::loss_family)
        .unwrap_or(LossKind::DirectedWeightedMse)
}

/// Run the sampled pipeline once per worker count on identical data and
/// report each stage's wall time.
pub fn benchmark_parallel(
    cfg: &ExperimentConfig,
    worker_counts: &[usize],
) -> Result<Vec<ParallelPoint>, HarnessError> {
    cfg.validate()?;
    if worker_counts.is_empty() || worker_counts.contains(&0) {
        return Err(HarnessError::Config(
            "worker counts must be nonempty and positive".into(),
        ));
    }
    let seed = cfg.seeds[0];
    let data = prepare_seed(cfg, seed)?;
    let family = bench_family(cfg);
    let sample_cfg = SampleConfig {
        seed,
        ..cfg.sample.clone()
    };
    let fit_cfg = FitConfig {
        seed,
        ..cfg.fit.clone()
    };
    let init_seed: u64 = crate::rng::stream(seed, "model seed", &[0]).gen();

    let mut points = Vec::with_capacity(worker_counts.len());
    for &workers in worker_counts {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| HarnessError::Pool(e.to_string()))?;
        let point = pool.install(|| -> Result<ParallelPoint, HarnessError> {
            let problem = data.dataset.problem()?;
            let t0 = Instant::now();
            let table = sample_dataset(problem.as_ref(), &sample_cfg, &data.dataset, Split::Train)?;
            let sample_seconds = t0.elapsed().as_secs_f64();

            let t0 = Instant::now();
            let losses = fit_split(family, &fit_cfg, &data.dataset, &table)?;
            let fit_seconds = t0.elapsed().as_secs_f64();

            let train_cfg = TrainConfig {
                steps: cfg.steps,
                lr: cfg.lr_loss,
                ..TrainConfig::lodl(init_seed)
            };
            let t0 = Instant::now();
            train_with_lodl(data.spec, &data.train, &losses, &train_cfg)?;
            let train_seconds = t0.elapsed().as_secs_f64();

            let dfl_cfg = TrainConfig {
                steps: cfg.dfl_budget(),
                lr: cfg.lr_dfl,
                ..TrainConfig::dfl(init_seed)
            };
            let t0 = Instant::now();
            train_dfl(data.spec, problem.as_ref(), &data.train, &data.val, &dfl_cfg)?;
            let dfl_seconds = t0.elapsed().as_secs_f64();

            Ok(ParallelPoint {
                workers,
                sample_seconds,
                fit_seconds,
                train_seconds,
                dfl_seconds,
            })
        })?;
        points.push(point);
    }
    Ok(points)
}

/// Sample and fit once, then train `m` models off the shared losses; the
/// per-model cost includes the fixed cost spread over the models trained
/// so far.
pub fn benchmark_amortization(
    cfg: &ExperimentConfig,
    m: usize,
) -> Result<AmortizationReport, HarnessError> {
    cfg.validate()?;
    if m == 0 {
        return Err(HarnessError::Config("need at least one model".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers.max(1))
        .build()
        .map_err(|e| HarnessError::Pool(e.to_string()))?;
    pool.install(|| {
        let seed = cfg.seeds[0];
        let data = prepare_seed(cfg, seed)?;
        let family = bench_family(cfg);
        let problem = data.dataset.problem()?;
        let sample_cfg = SampleConfig {
            seed,
            ..cfg.sample.clone()
        };
        let fit_cfg = FitConfig {
            seed,
            ..cfg.fit.clone()
        };

        let t0 = Instant::now();
        let table = sample_dataset(problem.as_ref(), &sample_cfg, &data.dataset, Split::Train)?;
        let losses = fit_split(family, &fit_cfg, &data.dataset, &table)?;
        let fixed_seconds = t0.elapsed().as_secs_f64();

        let mut train_seconds = Vec::with_capacity(m);
        let mut lodl_per_model = Vec::with_capacity(m);
        let mut total_train = 0.0;
        for i in 0..m {
            let init_seed: u64 = crate::rng::stream(seed, "model seed", &[i as u64]).gen();
            let train_cfg = TrainConfig {
                steps: cfg.steps,
                lr: cfg.lr_loss,
                ..TrainConfig::lodl(init_seed)
            };
            let t0 = Instant::now();
            train_with_lodl(data.spec, &data.train, &losses, &train_cfg)?;
            let secs = t0.elapsed().as_secs_f64();
            total_train += secs;
            train_seconds.push(secs);
            lodl_per_model.push((fixed_seconds + total_train) / (i + 1) as f64);
        }

        let init_seed: u64 = crate::rng::stream(seed, "model seed", &[0]).gen();
        let two_cfg = TrainConfig {
            steps: cfg.steps,
            lr: cfg.lr_mse,
            ..TrainConfig::two_stage(init_seed)
        };
        let t0 = Instant::now();
        train_two_stage(data.spec, &data.train, &data.val, &two_cfg)?;
        let two_stage_seconds = t0.elapsed().as_secs_f64();

        let dfl_cfg = TrainConfig {
            steps: cfg.dfl_budget(),
            lr: cfg.lr_dfl,
            ..TrainConfig::dfl(init_seed)
        };
        let t0 = Instant::now();
        train_dfl(data.spec, problem.as_ref(), &data.train, &data.val, &dfl_cfg)?;
        let dfl_seconds = t0.elapsed().as_secs_f64();

        Ok(AmortizationReport {
            domain: cfg.domain.name().into(),
            m,
            fixed_seconds,
            train_seconds,
            lodl_per_model,
            two_stage_seconds,
            dfl_seconds,
        })
    })
}
