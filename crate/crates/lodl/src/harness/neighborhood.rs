//! Does a fitted loss's accuracy predict its downstream decision quality?
//!
//! Two mean-absolute-error probes per loss family: one on a fresh cloud of
//! label perturbations (same distribution the losses were fitted on, new
//! seed), one on the predictions a model actually visited during training.
//! The report correlates both with normalized test decision quality across
//! families.

use std::collections::HashMap;
use std::time::Instant;

use rand::Rng;

use crate::domains::{DecisionProblem, Instance, Split};
use crate::losses::{fit_split, FitConfig, FittedLoss, LossKind};
use crate::models::{evaluate_dq, train_with_lodl, Checkpoint, TrainConfig};
use crate::sampling::{perturbation, sample_dataset, SampleConfig, SampleTable};

use super::experiment::{prepare_seed, ExperimentConfig};
use super::{normalize_dq, pearson, HarnessError};

#[derive(Clone, Debug, serde::Serialize)]
pub struct NeighborhoodRow {
    pub family: LossKind,
    /// Mean |loss - clipped regret| over a fresh perturbation cloud.
    pub mae_gaussian: f64,
    /// Mean |loss - clipped regret| over training checkpoints.
    pub mae_empirical: f64,
    pub normalized_dq: f64,
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct NeighborhoodReport {
    pub domain: String,
    pub seeds: Vec<u64>,
    /// One row per loss family, averaged over seeds.
    pub rows: Vec<NeighborhoodRow>,
    pub corr_gaussian_dq: f64,
    pub corr_empirical_dq: f64,
    pub wall_seconds: f64,
}

/// Mean absolute error of the fitted losses against clipped regrets on a
/// fresh sample table drawn under a held-out seed.
pub fn mae_gaussian_neighborhood(
    losses: &[FittedLoss],
    fresh: &SampleTable,
) -> Result<f64, HarnessError> {
    if losses.is_empty() {
        return Err(HarnessError::Config("no fitted losses given".into()));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for loss in losses {
        let samples = fresh.by_id(loss.instance_id).ok_or_else(|| {
            HarnessError::Config(format!(
                "fresh table has no samples for instance {}",
                loss.instance_id
            ))
        })?;
        let targets = samples.targets();
        for (k, target) in targets.iter().enumerate() {
            let delta = perturbation(&fresh.config, loss.instance_id, k, loss.y.len());
            let yhat: Vec<f64> = loss.y.iter().zip(&delta).map(|(y, d)| y + d).collect();
            total += (loss.eval(&yhat)? - target).abs();
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Mean absolute error of the fitted losses against exact clipped regrets
/// at the predictions recorded in training checkpoints. This is the one
/// place the exact oracle touches model outputs.
pub fn mae_empirical_neighborhood(
    losses: &[FittedLoss],
    checkpoints: &[Checkpoint],
    train: &[Instance],
    problem: &dyn DecisionProblem,
) -> Result<f64, HarnessError> {
    if checkpoints.is_empty() {
        return Err(HarnessError::Config("no checkpoints recorded".into()));
    }
    let by_id: HashMap<u64, &FittedLoss> = losses.iter().map(|l| (l.instance_id, l)).collect();
    let mut truth_dq = Vec::with_capacity(train.len());
    for inst in train {
        truth_dq.push(problem.decision_quality(&inst.y, &inst.y)?);
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for checkpoint in checkpoints {
        if checkpoint.predictions.len() != train.len() {
            return Err(HarnessError::Config(
                "checkpoint predictions do not match the training split".into(),
            ));
        }
        for (i, inst) in train.iter().enumerate() {
            let loss = by_id.get(&inst.id).ok_or_else(|| {
                HarnessError::Config(format!("no fitted loss for instance {}", inst.id))
            })?;
            let yhat = &checkpoint.predictions[i];
            let dq = problem.decision_quality(yhat, &inst.y)?;
            let target = (truth_dq[i] - dq).max(0.0);
            total += (loss.eval(yhat)? - target).abs();
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Fit every loss family per seed, train one model per family, and measure
/// how each family's fit error relates to its decision quality.
pub fn neighborhood_report(cfg: &ExperimentConfig) -> Result<NeighborhoodReport, HarnessError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers.max(1))
        .build()
        .map_err(|e| HarnessError::Pool(e.to_string()))?;
    pool.install(|| neighborhood_inner(cfg))
}

fn neighborhood_inner(cfg: &ExperimentConfig) -> Result<NeighborhoodReport, HarnessError> {
    let t0 = Instant::now();
    let families = LossKind::ALL;
    let mut mae_gaussian = vec![0.0; families.len()];
    let mut mae_empirical = vec![0.0; families.len()];
    let mut dq = vec![0.0; families.len()];

    for &seed in &cfg.seeds {
        let data = prepare_seed(cfg, seed)?;
        let problem = data.dataset.problem()?;
        let sample_cfg = SampleConfig {
            seed,
            ..cfg.sample.clone()
        };
        let table = sample_dataset(problem.as_ref(), &sample_cfg, &data.dataset, Split::Train)?;
        let fresh_seed: u64 = crate::rng::stream(seed, "held-out neighborhood", &[]).gen();
        let fresh_cfg = SampleConfig {
            seed: fresh_seed,
            ..cfg.sample.clone()
        };
        let fresh = sample_dataset(problem.as_ref(), &fresh_cfg, &data.dataset, Split::Train)?;
        let fit_cfg = FitConfig {
            seed,
            ..cfg.fit.clone()
        };
        let init_seed: u64 = crate::rng::stream(seed, "model seed", &[0]).gen();

        for (f, &kind) in families.iter().enumerate() {
            let losses = fit_split(kind, &fit_cfg, &data.dataset, &table)?;
            let train_cfg = TrainConfig {
                steps: cfg.steps,
                lr: cfg.lr_loss,
                ..TrainConfig::lodl(init_seed)
            };
            let outcome = train_with_lodl(data.spec, &data.train, &losses, &train_cfg)?;
            let (per, _) = evaluate_dq(&outcome.model, &data.test, problem.as_ref())?;
            dq[f] += normalize_dq(&per, data.random_ref, data.optimal_ref)?;
            mae_gaussian[f] += mae_gaussian_neighborhood(&losses, &fresh)?;
            mae_empirical[f] += mae_empirical_neighborhood(
                &losses,
                &outcome.checkpoints,
                &data.train,
                problem.as_ref(),
            )?;
        }
    }

    let n = cfg.seeds.len() as f64;
    let rows: Vec<NeighborhoodRow> = families
        .iter()
        .enumerate()
        .map(|(f, &family)| NeighborhoodRow {
            family,
            mae_gaussian: mae_gaussian[f] / n,
            mae_empirical: mae_empirical[f] / n,
            normalized_dq: dq[f] / n,
        })
        .collect();
    let dqs: Vec<f64> = rows.iter().map(|r| r.normalized_dq).collect();
    let gauss: Vec<f64> = rows.iter().map(|r| r.mae_gaussian).collect();
    let emp: Vec<f64> = rows.iter().map(|r| r.mae_empirical).collect();
    Ok(NeighborhoodReport {
        domain: cfg.domain.name().into(),
        seeds: cfg.seeds.clone(),
        corr_gaussian_dq: pearson(&gauss, &dqs),
        corr_empirical_dq: pearson(&emp, &dqs),
        rows,
        wall_seconds: t0.elapsed().as_secs_f64(),
    })
}
