//! Sweep of sampling strategy, sample count, and loss family. Each
//! (strategy, k) pair shares one sample table per seed; every family under
//! it fits and trains off that table.

use rand::Rng;

use crate::domains::Split;
use crate::losses::{fit_split, FitConfig, LossKind};
use crate::models::{evaluate_dq, train_with_lodl, TrainConfig};
use crate::sampling::{sample_dataset, PerturbStrategy, SampleConfig};

use super::experiment::{prepare_seed, ExperimentConfig};
use super::{mean_std, normalize_dq, HarnessError};

#[derive(Clone, Debug)]
pub struct AblationConfig {
    /// Domain, seeds, fitting and training settings; methods are ignored.
    pub base: ExperimentConfig,
    pub strategies: Vec<PerturbStrategy>,
    pub ks: Vec<usize>,
    pub families: Vec<LossKind>,
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct AblationCell {
    pub strategy: PerturbStrategy,
    pub k: usize,
    pub family: LossKind,
    pub mean_dq: f64,
    pub std_dq: f64,
    pub per_seed: Vec<f64>,
}

/// One trained model per (strategy, k, family, seed), first initialization
/// only; rows come back in strategy-major, then k, then family order.
pub fn ablation_suite(cfg: &AblationConfig) -> Result<Vec<AblationCell>, HarnessError> {
    cfg.base.validate()?;
    if cfg.strategies.is_empty() || cfg.ks.is_empty() || cfg.families.is_empty() {
        return Err(HarnessError::Config(
            "ablation needs at least one strategy, k, and family".into(),
        ));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.base.workers.max(1))
        .build()
        .map_err(|e| HarnessError::Pool(e.to_string()))?;
    pool.install(|| ablation_inner(cfg))
}

fn ablation_inner(cfg: &AblationConfig) -> Result<Vec<AblationCell>, HarnessError> {
    let base = &cfg.base;
    let n_cells = cfg.strategies.len() * cfg.ks.len() * cfg.families.len();
    let mut per_cell: Vec<Vec<f64>> = vec![Vec::with_capacity(base.seeds.len()); n_cells];

    for &seed in &base.seeds {
        let data = prepare_seed(base, seed)?;
        let problem = data.dataset.problem()?;
        let fit_cfg = FitConfig {
            seed,
            ..base.fit.clone()
        };
        let init_seed: u64 = crate::rng::stream(seed, "model seed", &[0]).gen();
        let train_cfg = TrainConfig {
            steps: base.steps,
            lr: base.lr_loss,
            ..TrainConfig::lodl(init_seed)
        };

        let mut idx = 0;
        for &strategy in &cfg.strategies {
            for &k in &cfg.ks {
                let sample_cfg = SampleConfig {
                    strategy,
                    alpha: base.sample.alpha,
                    k,
                    seed,
                };
                let table =
                    sample_dataset(problem.as_ref(), &sample_cfg, &data.dataset, Split::Train)?;
                for &family in &cfg.families {
                    let losses = fit_split(family, &fit_cfg, &data.dataset, &table)?;
                    let outcome = train_with_lodl(data.spec, &data.train, &losses, &train_cfg)?;
                    let (per, _) = evaluate_dq(&outcome.model, &data.test, problem.as_ref())?;
                    per_cell[idx].push(normalize_dq(&per, data.random_ref, data.optimal_ref)?);
                    idx += 1;
                }
            }
        }
    }

    let mut cells = Vec::with_capacity(n_cells);
    let mut idx = 0;
    for &strategy in &cfg.strategies {
        for &k in &cfg.ks {
            for &family in &cfg.families {
                let per_seed = per_cell[idx].clone();
                let (mean_dq, std_dq) = mean_std(&per_seed);
                cells.push(AblationCell {
                    strategy,
                    k,
                    family,
                    mean_dq,
                    std_dq,
                    per_seed,
                });
                idx += 1;
            }
        }
    }
    Ok(cells)
}
