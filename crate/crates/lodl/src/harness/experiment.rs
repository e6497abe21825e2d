//! The method x seed x initialization grid runner.
//!
//! Per seed, the expensive artifacts are materialized once and shared: one
//! sample table serves every loss family, and one set of fitted losses per
//! family serves every model initialization. Their cost and oracle calls are
//! charged to the first cell that needs them; every later cell records a
//! cache hit (zero cost). Cells run in a fixed order, so reruns produce the
//! records in identical order.

use std::collections::{HashMap, HashSet};
use std::time::Instant;

use rand::Rng;

use crate::domains::{Dataset, DecisionProblem, DomainConfig, Instance, Split};
use crate::losses::{fit_split, FitConfig, FittedLoss, LossKind};
use crate::models::{
    evaluate_dq, train_dfl, train_two_stage, train_with_lodl, EarlyStop, ModelSpec, Regime,
    TrainConfig, TrainOutcome,
};
use crate::sampling::{sample_dataset, SampleConfig, SampleTable};

use super::{normalize_dq, HarnessError, Method, RunRecord, TimingRecord};

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub domain: DomainConfig,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    /// Model initializations per (method, seed); baselines ignore it.
    pub n_inits: usize,
    /// Oracle sampling settings; the seed field is replaced by the run seed.
    pub sample: SampleConfig,
    /// Loss fitting settings; the seed field is replaced by the run seed.
    pub fit: FitConfig,
    /// Training steps for the gradient-descent regimes.
    pub steps: usize,
    /// Learning rate for models trained against fitted losses.
    pub lr_loss: f64,
    /// Learning rate for the plain squared-error regime.
    pub lr_mse: f64,
    pub lr_dfl: f64,
    /// Reduced step budget for decision-focused training; defaults to
    /// `steps`.
    pub dfl_steps: Option<usize>,
    /// Uniform prediction draws per test instance for the random baseline.
    pub random_draws: usize,
    pub workers: usize,
}

impl ExperimentConfig {
    /// Full results-table grid for one domain: every method, 5 seeds,
    /// 3 initializations.
    pub fn table1(domain: DomainConfig) -> ExperimentConfig {
        let sample = SampleConfig::for_domain(domain.name(), 0);
        ExperimentConfig {
            domain,
            methods: Method::all(),
            seeds: (0..5).collect(),
            n_inits: 3,
            sample,
            fit: FitConfig::default(),
            steps: 500,
            lr_loss: 0.01,
            lr_mse: 0.01,
            lr_dfl: 0.005,
            dfl_steps: None,
            random_draws: 100,
            workers: 1,
        }
    }

    pub(crate) fn validate(&self) -> Result<(), HarnessError> {
        if self.methods.is_empty() {
            return Err(HarnessError::Config("no methods selected".into()));
        }
        if self.seeds.is_empty() {
            return Err(HarnessError::Config("no seeds selected".into()));
        }
        if self.n_inits == 0 {
            return Err(HarnessError::Config("need at least one initialization".into()));
        }
        if self.random_draws == 0 {
            return Err(HarnessError::Config("need at least one random draw".into()));
        }
        if self.steps == 0 || self.dfl_steps == Some(0) {
            return Err(HarnessError::Config("step budgets must be at least 1".into()));
        }
        Ok(())
    }

    pub(crate) fn dfl_budget(&self) -> usize {
        self.dfl_steps.unwrap_or(self.steps)
    }
}

/// A cell that errored; the grid keeps going and records why.
#[derive(Clone, Debug)]
pub struct CellFailure {
    pub domain: String,
    pub method: Method,
    pub seed: u64,
    pub init: usize,
    pub stage: &'static str,
    pub message: String,
}

#[derive(Debug, Default)]
pub struct ExperimentResult {
    pub records: Vec<RunRecord>,
    pub timings: Vec<TimingRecord>,
    pub failures: Vec<CellFailure>,
}

/// Everything derived from one seed before any method runs.
pub(crate) struct SeedData {
    pub dataset: Dataset,
    pub train: Vec<Instance>,
    pub val: Vec<Instance>,
    pub test: Vec<Instance>,
    pub spec: ModelSpec,
    pub random_ref: f64,
    pub optimal_ref: f64,
}

/// Uniform prediction range of the random baseline, matched to each
/// domain's output range.
pub fn random_range(domain: &DomainConfig) -> (f64, f64) {
    match domain {
        DomainConfig::Portfolio(_) => (-1.0, 1.0),
        _ => (0.0, 1.0),
    }
}

/// Mean decision quality of uniform-random predictions over the given
/// instances, `draws` draws each.
pub fn random_baseline(
    problem: &dyn DecisionProblem,
    instances: &[Instance],
    range: (f64, f64),
    seed: u64,
    purpose: &str,
    draws: usize,
) -> Result<Vec<f64>, HarnessError> {
    let mut per_instance = Vec::with_capacity(instances.len());
    for inst in instances {
        let mut rng = crate::rng::stream(seed, purpose, &[inst.id]);
        let mut total = 0.0;
        for _ in 0..draws {
            let yhat: Vec<f64> = (0..inst.y.len())
                .map(|_| rng.gen_range(range.0..range.1))
                .collect();
            total += problem.decision_quality(&yhat, &inst.y)?;
        }
        per_instance.push(total / draws as f64);
    }
    Ok(per_instance)
}

pub(crate) fn prepare_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedData, HarnessError> {
    let dataset = cfg.domain.generate(seed)?;
    let train: Vec<Instance> = dataset.split(Split::Train).cloned().collect();
    let val: Vec<Instance> = dataset.split(Split::Val).cloned().collect();
    let test: Vec<Instance> = dataset.split(Split::Test).cloned().collect();
    if train.is_empty() || val.is_empty() || test.is_empty() {
        return Err(HarnessError::Config(
            "experiment needs nonempty train, val, and test splits".into(),
        ));
    }
    let spec = ModelSpec::for_domain(&dataset.config);
    let problem = dataset.problem()?;
    let mut optimal_total = 0.0;
    for inst in &test {
        optimal_total += problem.decision_quality(&inst.y, &inst.y)?;
    }
    let optimal_ref = optimal_total / test.len() as f64;
    let random = random_baseline(
        problem.as_ref(),
        &test,
        random_range(&cfg.domain),
        seed,
        "random baseline",
        cfg.random_draws,
    )?;
    let random_ref = random.iter().sum::<f64>() / random.len() as f64;
    Ok(SeedData {
        dataset,
        train,
        val,
        test,
        spec,
        random_ref,
        optimal_ref,
    })
}

struct SeedArtifacts {
    table: Option<(SampleTable, f64, u64)>,
    losses: HashMap<LossKind, (Vec<FittedLoss>, f64)>,
}

/// Sample once and fit each required family once, timing each stage and
/// counting its oracle calls through a dedicated problem instance.
fn build_artifacts(
    cfg: &ExperimentConfig,
    data: &SeedData,
    seed: u64,
    failures: &mut Vec<CellFailure>,
) -> Result<SeedArtifacts, HarnessError> {
    let families: Vec<LossKind> = {
        let mut seen = HashSet::new();
        cfg.methods
            .iter()
            .filter_map(Method::loss_family)
            .filter(|k| seen.insert(*k))
            .collect()
    };
    if families.is_empty() {
        return Ok(SeedArtifacts {
            table: None,
            losses: HashMap::new(),
        });
    }
    let sample_cfg = SampleConfig {
        seed,
        ..cfg.sample.clone()
    };
    let problem = data.dataset.problem()?;
    let t0 = Instant::now();
    let table = sample_dataset(problem.as_ref(), &sample_cfg, &data.dataset, Split::Train)?;
    let t_sample = t0.elapsed().as_secs_f64();
    let sample_calls = problem.counters().exact_calls();

    let fit_cfg = FitConfig {
        seed,
        ..cfg.fit.clone()
    };
    let mut losses = HashMap::new();
    for kind in families {
        let t0 = Instant::now();
        match fit_split(kind, &fit_cfg, &data.dataset, &table) {
            Ok(fitted) => {
                losses.insert(kind, (fitted, t0.elapsed().as_secs_f64()));
            }
            Err(e) => failures.push(CellFailure {
                domain: cfg.domain.name().into(),
                method: Method::Lodl(kind),
                seed,
                init: 0,
                stage: "fit",
                message: e.to_string(),
            }),
        }
    }
    Ok(SeedArtifacts {
        table: Some((table, t_sample, sample_calls)),
        losses,
    })
}

struct CellOutput {
    per_instance: Vec<f64>,
    raw_mean: f64,
    t_train: f64,
    t_eval: f64,
    oracle_train: u64,
    oracle_eval: u64,
    /// (mean step seconds, mean relaxed-solve seconds) when the cell
    /// trained a model.
    step_seconds: Option<f64>,
    surrogate_solve_seconds: Option<f64>,
}

fn evaluate_outcome(
    data: &SeedData,
    outcome: &TrainOutcome,
) -> Result<(Vec<f64>, f64, f64, u64), HarnessError> {
    let problem = data.dataset.problem()?;
    let t0 = Instant::now();
    let (per, mean) = evaluate_dq(&outcome.model, &data.test, problem.as_ref())?;
    Ok((
        per,
        mean,
        t0.elapsed().as_secs_f64(),
        problem.counters().exact_calls(),
    ))
}

fn run_cell(
    cfg: &ExperimentConfig,
    data: &SeedData,
    artifacts: &SeedArtifacts,
    method: Method,
    seed: u64,
    init: usize,
) -> Result<CellOutput, (&'static str, HarnessError)> {
    let init_seed: u64 = crate::rng::stream(seed, "model seed", &[init as u64]).gen();
    match method {
        Method::Random => {
            let problem = data.dataset.problem().map_err(|e| ("eval", e.into()))?;
            let t0 = Instant::now();
            let per = random_baseline(
                problem.as_ref(),
                &data.test,
                random_range(&cfg.domain),
                seed,
                "random method",
                cfg.random_draws,
            )
            .map_err(|e| ("eval", e))?;
            let raw_mean = per.iter().sum::<f64>() / per.len() as f64;
            Ok(CellOutput {
                raw_mean,
                per_instance: per,
                t_train: 0.0,
                t_eval: t0.elapsed().as_secs_f64(),
                oracle_train: 0,
                oracle_eval: problem.counters().exact_calls(),
                step_seconds: None,
                surrogate_solve_seconds: None,
            })
        }
        Method::Optimal => {
            let problem = data.dataset.problem().map_err(|e| ("eval", e.into()))?;
            let t0 = Instant::now();
            let mut per = Vec::with_capacity(data.test.len());
            for inst in &data.test {
                per.push(
                    problem
                        .decision_quality(&inst.y, &inst.y)
                        .map_err(|e| ("eval", e.into()))?,
                );
            }
            let raw_mean = per.iter().sum::<f64>() / per.len() as f64;
            Ok(CellOutput {
                raw_mean,
                per_instance: per,
                t_train: 0.0,
                t_eval: t0.elapsed().as_secs_f64(),
                oracle_train: 0,
                oracle_eval: problem.counters().exact_calls(),
                step_seconds: None,
                surrogate_solve_seconds: None,
            })
        }
        Method::TwoStage => {
            let train_cfg = TrainConfig {
                steps: cfg.steps,
                lr: cfg.lr_mse,
                checkpoint_every: 25,
                early_stop: EarlyStop::ValMse,
                regime: Regime::TwoStage,
                seed: init_seed,
            };
            let t0 = Instant::now();
            let outcome = train_two_stage(data.spec, &data.train, &data.val, &train_cfg)
                .map_err(|e| ("train", e.into()))?;
            let t_train = t0.elapsed().as_secs_f64();
            let (per, raw_mean, t_eval, oracle_eval) =
                evaluate_outcome(data, &outcome).map_err(|e| ("eval", e))?;
            Ok(CellOutput {
                per_instance: per,
                raw_mean,
                t_train,
                t_eval,
                oracle_train: 0,
                oracle_eval,
                step_seconds: Some(t_train / cfg.steps as f64),
                surrogate_solve_seconds: None,
            })
        }
        Method::Lodl(kind) => {
            let (losses, _) = artifacts
                .losses
                .get(&kind)
                .ok_or(("fit", HarnessError::Config("loss fitting failed for this family".into())))?;
            let train_cfg = TrainConfig {
                steps: cfg.steps,
                lr: cfg.lr_loss,
                checkpoint_every: 25,
                early_stop: EarlyStop::None,
                regime: Regime::Lodl,
                seed: init_seed,
            };
            let t0 = Instant::now();
            let outcome = train_with_lodl(data.spec, &data.train, losses, &train_cfg)
                .map_err(|e| ("train", e.into()))?;
            let t_train = t0.elapsed().as_secs_f64();
            let (per, raw_mean, t_eval, oracle_eval) =
                evaluate_outcome(data, &outcome).map_err(|e| ("eval", e))?;
            Ok(CellOutput {
                per_instance: per,
                raw_mean,
                t_train,
                t_eval,
                oracle_train: 0,
                oracle_eval,
                step_seconds: Some(t_train / cfg.steps as f64),
                surrogate_solve_seconds: None,
            })
        }
        Method::Dfl => {
            let steps = cfg.dfl_budget();
            let train_cfg = TrainConfig {
                steps,
                lr: cfg.lr_dfl,
                checkpoint_every: 25,
                early_stop: EarlyStop::ValDq,
                regime: Regime::Dfl,
                seed: init_seed,
            };
            let problem = data.dataset.problem().map_err(|e| ("train", e.into()))?;
            let t0 = Instant::now();
            let outcome = train_dfl(data.spec, problem.as_ref(), &data.train, &data.val, &train_cfg)
                .map_err(|e| ("train", e.into()))?;
            let t_train = t0.elapsed().as_secs_f64();
            let oracle_train =
                problem.counters().exact_calls() + problem.counters().surrogate_calls();
            let solves = ((steps + 1) * data.train.len()) as f64;
            let surrogate_solve_seconds = outcome.surrogate_seconds / solves;
            let (per, raw_mean, t_eval, oracle_eval) =
                evaluate_outcome(data, &outcome).map_err(|e| ("eval", e))?;
            Ok(CellOutput {
                per_instance: per,
                raw_mean,
                t_train,
                t_eval,
                oracle_train,
                oracle_eval,
                step_seconds: None,
                surrogate_solve_seconds: Some(surrogate_solve_seconds),
            })
        }
    }
}

/// Run the full grid. Cell failures are recorded, not fatal; config and
/// data-preparation failures abort the affected seed.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult, HarnessError> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers.max(1))
        .build()
        .map_err(|e| HarnessError::Pool(e.to_string()))?;
    pool.install(|| run_grid(cfg))
}

fn run_grid(cfg: &ExperimentConfig) -> Result<ExperimentResult, HarnessError> {
    let domain = cfg.domain.name().to_string();
    let mut result = ExperimentResult::default();
    for &seed in &cfg.seeds {
        let data = match prepare_seed(cfg, seed) {
            Ok(d) => d,
            Err(e) => {
                result.failures.push(CellFailure {
                    domain: domain.clone(),
                    method: cfg.methods[0],
                    seed,
                    init: 0,
                    stage: "data",
                    message: e.to_string(),
                });
                continue;
            }
        };
        let artifacts = match build_artifacts(cfg, &data, seed, &mut result.failures) {
            Ok(a) => a,
            Err(e) => {
                result.failures.push(CellFailure {
                    domain: domain.clone(),
                    method: cfg.methods[0],
                    seed,
                    init: 0,
                    stage: "sample",
                    message: e.to_string(),
                });
                continue;
            }
        };

        let mut table_charged = false;
        let mut fit_charged: HashSet<LossKind> = HashSet::new();
        let mut step_seconds = None;
        let mut surrogate_solve_seconds = None;

        for &method in &cfg.methods {
            let inits = match method {
                Method::Random | Method::Optimal => 1,
                _ => cfg.n_inits,
            };
            for init in 0..inits {
                match run_cell(cfg, &data, &artifacts, method, seed, init) {
                    Ok(out) => {
                        let normalized =
                            match normalize_dq(&out.per_instance, data.random_ref, data.optimal_ref)
                            {
                                Ok(v) => v,
                                Err(e) => {
                                    result.failures.push(CellFailure {
                                        domain: domain.clone(),
                                        method,
                                        seed,
                                        init,
                                        stage: "normalize",
                                        message: e.to_string(),
                                    });
                                    continue;
                                }
                            };
                        // shared artifacts are charged to their first user
                        let (mut t_sample, mut oracle_sample) = (0.0, 0);
                        let mut t_fit = 0.0;
                        if let Some(kind) = method.loss_family() {
                            if !table_charged {
                                if let Some((_, secs, calls)) = &artifacts.table {
                                    t_sample = *secs;
                                    oracle_sample = *calls;
                                    table_charged = true;
                                }
                            }
                            if fit_charged.insert(kind) {
                                if let Some((_, secs)) = artifacts.losses.get(&kind) {
                                    t_fit = *secs;
                                }
                            }
                        }
                        if step_seconds.is_none() {
                            step_seconds = out.step_seconds;
                        }
                        if surrogate_solve_seconds.is_none() {
                            surrogate_solve_seconds = out.surrogate_solve_seconds;
                        }
                        result.records.push(RunRecord {
                            domain: domain.clone(),
                            method,
                            seed,
                            init,
                            normalized_dq: normalized,
                            raw_dq: out.raw_mean,
                            t_sample,
                            t_fit,
                            t_train: out.t_train,
                            t_eval: out.t_eval,
                            oracle_sample,
                            oracle_train: out.oracle_train,
                            oracle_eval: out.oracle_eval,
                        });
                    }
                    Err((stage, e)) => result.failures.push(CellFailure {
                        domain: domain.clone(),
                        method,
                        seed,
                        init,
                        stage,
                        message: e.to_string(),
                    }),
                }
            }
        }

        let (t_oracle, k, sampled) = match &artifacts.table {
            Some((table, secs, calls)) => {
                let calls = (*calls).max(1);
                (secs / calls as f64, table.config.k, true)
            }
            None => (0.0, cfg.sample.k, false),
        };
        let t_lodl = cfg
            .methods
            .iter()
            .filter_map(Method::loss_family)
            .find_map(|kind| artifacts.losses.get(&kind))
            .map(|(losses, secs)| secs / losses.len().max(1) as f64)
            .unwrap_or(0.0);
        result.timings.push(TimingRecord {
            domain: domain.clone(),
            seed,
            t_steps: cfg.steps,
            k: if sampled { k } else { cfg.sample.k },
            n: data.train.len(),
            t_model: step_seconds.unwrap_or(0.0),
            t_oracle,
            t_oracle_surrogate: surrogate_solve_seconds.unwrap_or(0.0),
            t_lodl,
            workers: cfg.workers,
        });
    }
    Ok(result)
}
