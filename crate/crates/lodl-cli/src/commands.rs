//! One function per subcommand. Artifact-producing commands are cache
//! aware: an output that already exists under the same configuration is
//! reported as a hit and left untouched, and one that exists under a
//! different configuration is a loud error, never a silent overwrite.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;

use lodl::domains::{
    read_dataset, write_dataset, Dataset, DecisionProblem, Instance, Split,
};
use lodl::harness::{
    ablation_csv, ablation_suite, benchmark_amortization, benchmark_parallel, neighborhood_csv,
    neighborhood_report, normalize_dq, random_baseline, random_range, run_experiment, runs_csv,
    summary_table, timings_json, AblationConfig, ExperimentConfig, Method,
};
use lodl::losses::{fit_split, read_fitted_losses, write_fitted_losses, FittedLoss, LossKind};
use lodl::models::{
    evaluate_dq, read_model, train_dfl, train_two_stage, train_with_lodl, EarlyStop, Model,
    ModelSpec, Regime, TrainConfig, TrainOutcome, write_model,
};
use lodl::sampling::{read_sample_table, sample_dataset, write_sample_table};

use crate::config::Resolved;
use crate::CliError;

fn stage<E: std::fmt::Display>(name: &str) -> impl Fn(E) -> CliError + '_ {
    move |e| CliError::Stage(format!("{name}: {e}"))
}

struct Paths {
    data: PathBuf,
    samples: PathBuf,
    losses: PathBuf,
    models: PathBuf,
    reports: PathBuf,
}

fn paths(r: &Resolved) -> Result<Paths, CliError> {
    let p = Paths {
        data: r.out.join("data"),
        samples: r.out.join("samples"),
        losses: r.out.join("losses"),
        models: r.out.join("models"),
        reports: r.out.join("reports"),
    };
    for dir in [&p.data, &p.samples, &p.losses, &p.models, &p.reports] {
        fs::create_dir_all(dir).map_err(stage("out dir"))?;
    }
    Ok(p)
}

fn data_path(p: &Paths, r: &Resolved) -> PathBuf {
    p.data
        .join(format!("{}_seed{}.jsonl", r.domain.name(), r.seed))
}

fn table_path(p: &Paths, r: &Resolved) -> PathBuf {
    p.samples.join(format!(
        "{}_seed{}_{}_k{}.table",
        r.domain.name(),
        r.seed,
        r.sample.strategy.name(),
        r.sample.k
    ))
}

fn losses_path(p: &Paths, r: &Resolved, family: LossKind) -> PathBuf {
    p.losses.join(format!(
        "{}_seed{}_{}_k{}_{}.losses",
        r.domain.name(),
        r.seed,
        r.sample.strategy.name(),
        r.sample.k,
        family.name()
    ))
}

fn model_path(p: &Paths, r: &Resolved, method: Method) -> PathBuf {
    p.models
        .join(format!("{}_seed{}_{}.model", r.domain.name(), r.seed, method))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, text).map_err(stage("write"))?;
    fs::rename(&tmp, path).map_err(stage("write"))?;
    Ok(())
}

/// Load the dataset this config points at, insisting it was generated
/// under the same seed and domain settings.
fn load_dataset(p: &Paths, r: &Resolved) -> Result<Dataset, CliError> {
    let path = data_path(p, r);
    if !path.exists() {
        return Err(CliError::Stage(format!(
            "missing dataset {}; run `lodl gen-data` first",
            path.display()
        )));
    }
    let dataset = read_dataset(&path).map_err(stage("read dataset"))?;
    if dataset.seed != r.seed || dataset.config != r.domain {
        return Err(CliError::Stage(format!(
            "{} was generated under a different seed or domain config; \
             remove it or change out_dir",
            path.display()
        )));
    }
    Ok(dataset)
}

pub fn gen_data(r: &Resolved) -> Result<(), CliError> {
    let p = paths(r)?;
    let path = data_path(&p, r);
    if path.exists() {
        let existing = read_dataset(&path).map_err(stage("read dataset"))?;
        if existing.seed == r.seed && existing.config == r.domain {
            println!(
                "dataset cache hit: {} ({} instances)",
                path.display(),
                existing.instances.len()
            );
            return Ok(());
        }
        return Err(CliError::Stage(format!(
            "{} exists under a different seed or domain config; \
             remove it or change out_dir",
            path.display()
        )));
    }
    let dataset = r.domain.generate(r.seed).map_err(stage("gen-data"))?;
    write_dataset(&path, &dataset).map_err(stage("write dataset"))?;
    let count = |s| dataset.split(s).count();
    println!(
        "wrote {} ({} train / {} val / {} test, seed {})",
        path.display(),
        count(Split::Train),
        count(Split::Val),
        count(Split::Test),
        r.seed
    );
    Ok(())
}

pub fn sample(r: &Resolved) -> Result<(), CliError> {
    let p = paths(r)?;
    let path = table_path(&p, r);
    if path.exists() {
        let existing = read_sample_table(&path).map_err(stage("read samples"))?;
        if existing.config == r.sample && existing.domain == r.domain.name() {
            println!(
                "sample cache hit: {} ({} instances, 0 oracle calls)",
                path.display(),
                existing.instances.len()
            );
            return Ok(());
        }
        return Err(CliError::Stage(format!(
            "{} exists under a different sampling config; \
             remove it or change out_dir",
            path.display()
        )));
    }
    let dataset = load_dataset(&p, r)?;
    let problem = dataset.problem().map_err(stage("sample"))?;
    let table = sample_dataset(problem.as_ref(), &r.sample, &dataset, Split::Train)
        .map_err(stage("sample"))?;
    let calls = problem.counters().exact_calls();
    write_sample_table(&path, &table).map_err(stage("write samples"))?;
    println!(
        "wrote {} ({} instances, k {}, {} exact oracle calls)",
        path.display(),
        table.instances.len(),
        r.sample.k,
        calls
    );
    Ok(())
}

pub fn fit(r: &Resolved) -> Result<(), CliError> {
    let p = paths(r)?;
    let table_file = table_path(&p, r);
    if !table_file.exists() {
        return Err(CliError::Stage(format!(
            "missing sample table {}; run `lodl sample` first",
            table_file.display()
        )));
    }
    let path = losses_path(&p, r, r.family);
    if path.exists() {
        let (header, existing) = read_fitted_losses(&path).map_err(stage("read losses"))?;
        if header.kind == r.family && header.fit == r.fit && header.domain == r.domain.name() {
            println!(
                "fit cache hit: {} ({} losses)",
                path.display(),
                existing.len()
            );
            return Ok(());
        }
        return Err(CliError::Stage(format!(
            "{} exists under a different fit config; remove it or change out_dir",
            path.display()
        )));
    }
    let dataset = load_dataset(&p, r)?;
    let table = read_sample_table(&table_file).map_err(stage("read samples"))?;
    if table.config != r.sample || table.domain != r.domain.name() {
        return Err(CliError::Stage(format!(
            "{} was sampled under a different config; re-run `lodl sample`",
            table_file.display()
        )));
    }
    let losses = fit_split(r.family, &r.fit, &dataset, &table).map_err(stage("fit"))?;
    let mean_obj = losses.iter().map(|l| l.fit_objective).sum::<f64>() / losses.len().max(1) as f64;
    write_fitted_losses(&path, r.domain.name(), r.family, &r.fit, &losses)
        .map_err(stage("write losses"))?;
    println!(
        "wrote {} ({} {} losses, mean fit objective {:.6})",
        path.display(),
        losses.len(),
        r.family.name(),
        mean_obj
    );
    Ok(())
}

fn trainable(method: Method) -> Result<(), CliError> {
    if matches!(method, Method::Random | Method::Optimal) {
        return Err(CliError::Config(format!(
            "method `{method}` is a baseline and trains nothing; \
             choose 2-stage, dfl, or a loss family"
        )));
    }
    Ok(())
}

fn train_config(r: &Resolved, method: Method, init_seed: u64) -> TrainConfig {
    match method {
        Method::Dfl => TrainConfig {
            steps: r.train.dfl_steps.unwrap_or(r.train.steps),
            lr: r.train.dfl_lr,
            checkpoint_every: 25,
            early_stop: EarlyStop::ValDq,
            regime: Regime::Dfl,
            seed: init_seed,
        },
        Method::Lodl(_) => TrainConfig {
            steps: r.train.steps,
            lr: r.train.lodl_lr,
            checkpoint_every: 25,
            early_stop: EarlyStop::None,
            regime: Regime::Lodl,
            seed: init_seed,
        },
        _ => TrainConfig {
            steps: r.train.steps,
            lr: r.train.lr,
            checkpoint_every: 25,
            early_stop: EarlyStop::ValMse,
            regime: Regime::TwoStage,
            seed: init_seed,
        },
    }
}

fn run_training(
    r: &Resolved,
    p: &Paths,
    dataset: &Dataset,
    method: Method,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, CliError> {
    let spec = ModelSpec::for_domain(&dataset.config);
    let train: Vec<Instance> = dataset.split(Split::Train).cloned().collect();
    let val: Vec<Instance> = dataset.split(Split::Val).cloned().collect();
    match method {
        Method::TwoStage => {
            train_two_stage(spec, &train, &val, cfg).map_err(stage("train 2-stage"))
        }
        Method::Dfl => {
            let problem = dataset.problem().map_err(stage("train dfl"))?;
            train_dfl(spec, problem.as_ref(), &train, &val, cfg).map_err(stage("train dfl"))
        }
        Method::Lodl(kind) => {
            let losses_file = losses_path(p, r, kind);
            if !losses_file.exists() {
                return Err(CliError::Stage(format!(
                    "missing fitted losses {}; run `lodl fit --family {}` first",
                    losses_file.display(),
                    kind.name()
                )));
            }
            let (header, losses): (_, Vec<FittedLoss>) =
                read_fitted_losses(&losses_file).map_err(stage("read losses"))?;
            if header.kind != kind || header.domain != r.domain.name() {
                return Err(CliError::Stage(format!(
                    "{} holds a different family or domain; re-run `lodl fit`",
                    losses_file.display()
                )));
            }
            train_with_lodl(spec, &train, &losses, cfg).map_err(stage("train lodl"))
        }
        Method::Random | Method::Optimal => unreachable!("rejected by trainable()"),
    }
}

pub fn train(r: &Resolved) -> Result<(), CliError> {
    trainable(r.train.method)?;
    let p = paths(r)?;
    let dataset = load_dataset(&p, r)?;
    let init_seed: u64 = lodl::stream(r.seed, "model seed", &[0]).gen();
    let cfg = train_config(r, r.train.method, init_seed);
    let path = model_path(&p, r, r.train.method);
    if path.exists() {
        let (file, _) = read_model(&path).map_err(stage("read model"))?;
        if file.spec == ModelSpec::for_domain(&dataset.config) && file.train == Some(cfg) {
            println!("model cache hit: {}", path.display());
            return Ok(());
        }
        return Err(CliError::Stage(format!(
            "{} exists under a different model or training config; \
             remove it or change out_dir",
            path.display()
        )));
    }
    let outcome = run_training(r, &p, &dataset, r.train.method, &cfg)?;
    write_model(&path, &outcome.model, Some(&cfg)).map_err(stage("write model"))?;
    println!(
        "wrote {} ({} steps, final objective {:.6})",
        path.display(),
        outcome.steps_run,
        outcome.loss_curve.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn reference_points(
    r: &Resolved,
    dataset: &Dataset,
    problem: &dyn DecisionProblem,
    test: &[Instance],
) -> Result<(f64, f64), CliError> {
    let mut optimal_total = 0.0;
    for inst in test {
        optimal_total += problem
            .decision_quality(&inst.y, &inst.y)
            .map_err(stage("eval"))?;
    }
    let optimal_ref = optimal_total / test.len() as f64;
    let random = random_baseline(
        problem,
        test,
        random_range(&dataset.config),
        r.seed,
        "random baseline",
        r.experiment.random_draws,
    )
    .map_err(stage("eval"))?;
    let random_ref = random.iter().sum::<f64>() / random.len() as f64;
    Ok((random_ref, optimal_ref))
}

pub fn eval(r: &Resolved) -> Result<(), CliError> {
    trainable(r.train.method)?;
    let p = paths(r)?;
    let dataset = load_dataset(&p, r)?;
    let path = model_path(&p, r, r.train.method);
    if !path.exists() {
        return Err(CliError::Stage(format!(
            "missing model {}; run `lodl train` first",
            path.display()
        )));
    }
    let (_, model): (_, Model) = read_model(&path).map_err(stage("read model"))?;
    let problem = dataset.problem().map_err(stage("eval"))?;
    let test: Vec<Instance> = dataset.split(Split::Test).cloned().collect();
    let (per, raw_mean) = evaluate_dq(&model, &test, problem.as_ref()).map_err(stage("eval"))?;
    let (random_ref, optimal_ref) = reference_points(r, &dataset, problem.as_ref(), &test)?;
    let normalized = normalize_dq(&per, random_ref, optimal_ref).map_err(stage("eval"))?;
    let report = p.reports.join(format!(
        "eval_{}_seed{}_{}.csv",
        r.domain.name(),
        r.seed,
        r.train.method
    ));
    let mut csv = String::from("domain,method,seed,normalized_dq,raw_dq\n");
    csv.push_str(&format!(
        "{},{},{},{:.6},{:.6}\n",
        r.domain.name(),
        r.train.method,
        r.seed,
        normalized,
        raw_mean
    ));
    write_text(&report, &csv)?;
    println!(
        "{}: normalized decision quality {:.4} (raw {:.4}, random {:.4}, optimal {:.4})",
        r.train.method, normalized, raw_mean, random_ref, optimal_ref
    );
    println!("wrote {}", report.display());
    Ok(())
}

fn experiment_config(r: &Resolved, methods: Vec<Method>) -> ExperimentConfig {
    ExperimentConfig {
        domain: r.domain.clone(),
        methods,
        seeds: r.experiment.seeds.clone(),
        n_inits: r.experiment.n_inits,
        sample: r.sample.clone(),
        fit: r.fit.clone(),
        steps: r.train.steps,
        lr_loss: r.train.lodl_lr,
        lr_mse: r.train.lr,
        lr_dfl: r.train.dfl_lr,
        dfl_steps: r.train.dfl_steps,
        random_draws: r.experiment.random_draws,
        workers: r.workers,
    }
}

pub fn bench_parallel(r: &Resolved) -> Result<(), CliError> {
    let p = paths(r)?;
    let cfg = experiment_config(r, vec![Method::Lodl(r.family)]);
    let points =
        benchmark_parallel(&cfg, &r.bench.worker_counts).map_err(stage("bench-parallel"))?;
    let base = points[0].sample_seconds;
    println!("workers  sample_s  speedup  fit_s     train_s   dfl_s");
    for pt in &points {
        println!(
            "{:>7} {:>9.3} {:>8.2} {:>9.3} {:>9.3} {:>9.3}",
            pt.workers,
            pt.sample_seconds,
            base / pt.sample_seconds,
            pt.fit_seconds,
            pt.train_seconds,
            pt.dfl_seconds
        );
    }
    let path = p
        .reports
        .join(format!("bench_parallel_{}.json", r.domain.name()));
    let json = serde_json::to_string_pretty(&points).map_err(stage("bench-parallel"))?;
    write_text(&path, &(json + "\n"))?;
    println!("wrote {}", path.display());
    Ok(())
}

pub fn bench_amortize(r: &Resolved) -> Result<(), CliError> {
    let p = paths(r)?;
    let cfg = experiment_config(r, vec![Method::Lodl(r.family)]);
    let report = benchmark_amortization(&cfg, r.bench.m).map_err(stage("bench-amortize"))?;
    println!(
        "fixed cost {:.3}s over {} models; two-stage {:.3}s, dfl {:.3}s per model",
        report.fixed_seconds, report.m, report.two_stage_seconds, report.dfl_seconds
    );
    println!("models  per_model_s");
    for (i, per) in report.lodl_per_model.iter().enumerate() {
        println!("{:>6} {:>12.3}", i + 1, per);
    }
    let path = p
        .reports
        .join(format!("bench_amortize_{}.json", r.domain.name()));
    let json = serde_json::to_string_pretty(&report).map_err(stage("bench-amortize"))?;
    write_text(&path, &(json + "\n"))?;
    println!("wrote {}", path.display());
    Ok(())
}

pub fn ablate(r: &Resolved) -> Result<(), CliError> {
    let p = paths(r)?;
    let cfg = AblationConfig {
        base: experiment_config(r, vec![Method::Lodl(r.family)]),
        strategies: r.ablate.strategies.clone(),
        ks: r.ablate.ks.clone(),
        families: r.ablate.families.clone(),
    };
    let cells = ablation_suite(&cfg).map_err(stage("ablate"))?;
    let csv = ablation_csv(r.domain.name(), &cells);
    print!("{csv}");
    let path = p.reports.join(format!("ablation_{}.csv", r.domain.name()));
    write_text(&path, &csv)?;
    let json_path = p.reports.join(format!("ablation_{}.json", r.domain.name()));
    let json = serde_json::to_string_pretty(&cells).map_err(stage("ablate"))?;
    write_text(&json_path, &(json + "\n"))?;
    println!("wrote {} and {}", path.display(), json_path.display());
    Ok(())
}

pub fn neighborhood(r: &Resolved) -> Result<(), CliError> {
    let p = paths(r)?;
    let cfg = experiment_config(r, vec![Method::Lodl(r.family)]);
    let report = neighborhood_report(&cfg).map_err(stage("neighborhood"))?;
    let csv = neighborhood_csv(&report);
    print!("{csv}");
    println!(
        "correlation with decision quality: empirical {:.3}, gaussian {:.3}",
        report.corr_empirical_dq, report.corr_gaussian_dq
    );
    let path = p
        .reports
        .join(format!("neighborhood_{}.csv", r.domain.name()));
    write_text(&path, &csv)?;
    let json_path = p
        .reports
        .join(format!("neighborhood_{}.json", r.domain.name()));
    let json = serde_json::to_string_pretty(&report).map_err(stage("neighborhood"))?;
    write_text(&json_path, &(json + "\n"))?;
    println!("wrote {} and {}", path.display(), json_path.display());
    Ok(())
}

pub fn reproduce_table1(r: &Resolved) -> Result<(), CliError> {
    let p = paths(r)?;
    let cfg = experiment_config(r, r.experiment.methods.clone());
    let result = run_experiment(&cfg).map_err(stage("reproduce-table1"))?;
    for f in &result.failures {
        eprintln!(
            "cell failed: {} {} seed {} init {} at {}: {}",
            f.domain, f.method, f.seed, f.init, f.stage, f.message
        );
    }
    if result.records.is_empty() {
        return Err(CliError::Stage(
            "every grid cell failed; nothing to report".into(),
        ));
    }
    print!("{}", summary_table(&result.records));
    let csv_path = p.reports.join(format!("table1_{}.csv", r.domain.name()));
    write_text(&csv_path, &runs_csv(&result.records))?;
    let timings_path = p
        .reports
        .join(format!("table1_{}_timings.json", r.domain.name()));
    write_text(
        &timings_path,
        &timings_json(&result.timings).map_err(stage("reproduce-table1"))?,
    )?;
    if !result.failures.is_empty() {
        let mut text = String::new();
        for f in &result.failures {
            text.push_str(&format!(
                "{},{},{},{},{}: {}\n",
                f.domain, f.method, f.seed, f.init, f.stage, f.message
            ));
        }
        let fail_path = p
            .reports
            .join(format!("table1_{}_failures.txt", r.domain.name()));
        write_text(&fail_path, &text)?;
        eprintln!(
            "{} of {} cells failed; see {}",
            result.failures.len(),
            result.failures.len() + result.records.len(),
            fail_path.display()
        );
    }
    println!("wrote {} and {}", csv_path.display(), timings_path.display());
    Ok(())
}
