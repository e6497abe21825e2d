use super::*;
use crate::domains::{DomainConfig, LinearConfig, Split};
use crate::losses::{fit_split, FitConfig, FittedLoss, LossParams};
use crate::models::Checkpoint;
use crate::sampling::{sample_dataset, PerturbStrategy, SampleConfig, SampleTable};
use crate::sampling::InstanceSamples;

fn tiny_linear() -> DomainConfig {
    DomainConfig::Linear(LinearConfig {
        n_items: 10,
        budget: 2,
        n_train: 8,
        n_val: 4,
        n_test: 6,
        sinkhorn_eps: 0.1,
        sinkhorn_iters: 60,
    })
}

fn tiny_experiment(methods: Vec<Method>) -> ExperimentConfig {
    ExperimentConfig {
        domain: tiny_linear(),
        methods,
        seeds: vec![0],
        n_inits: 1,
        sample: SampleConfig {
            strategy: PerturbStrategy::All,
            alpha: 1.0,
            k: 20,
            seed: 0,
        },
        fit: FitConfig {
            iters: 40,
            ..FitConfig::default()
        },
        steps: 15,
        lr_loss: 0.01,
        lr_mse: 0.01,
        lr_dfl: 0.005,
        dfl_steps: None,
        random_draws: 20,
        workers: 1,
    }
}

#[test]
fn normalization_anchors_the_references_at_zero_and_one() {
    let raw = vec![3.0, 5.0];
    // mean 4.0 against random 1.0, optimal 4.0: lands exactly on 1
    assert_eq!(normalize_dq(&raw, 1.0, 4.0).unwrap(), 1.0);
    assert_eq!(normalize_dq(&[1.0, 1.0], 1.0, 4.0).unwrap(), 0.0);
    // below random goes negative
    assert!(normalize_dq(&[0.0], 1.0, 4.0).unwrap() < 0.0);
    // halfway
    let half = normalize_dq(&[2.5], 1.0, 4.0).unwrap();
    assert!((half - 0.5).abs() < 1e-12);
}

#[test]
fn degenerate_references_are_rejected() {
    assert!(matches!(
        normalize_dq(&[1.0], 2.0, 2.0),
        Err(HarnessError::Degenerate { .. })
    ));
    assert!(matches!(
        normalize_dq(&[1.0], 3.0, 2.0),
        Err(HarnessError::Degenerate { .. })
    ));
    assert!(matches!(
        normalize_dq(&[1.0], f64::NAN, 2.0),
        Err(HarnessError::Degenerate { .. })
    ));
}

#[test]
fn correlation_matches_hand_computed_values() {
    let a = [1.0, 2.0, 3.0, 4.0];
    assert!((pearson(&a, &[2.0, 4.0, 6.0, 8.0]) - 1.0).abs() < 1e-12);
    assert!((pearson(&a, &[8.0, 6.0, 4.0, 2.0]) + 1.0).abs() < 1e-12);
    // constant series carries no signal
    assert_eq!(pearson(&a, &[5.0, 5.0, 5.0, 5.0]), 0.0);
    // hand-checked: cov 3.5, va 5, vb 2.75 -> 3.5 / sqrt(13.75)
    let r = pearson(&a, &[1.0, 1.0, 2.0, 3.0]);
    assert!((r - 3.5 / 13.75_f64.sqrt()).abs() < 1e-12);
}

#[test]
fn mean_and_deviation_use_the_sample_convention() {
    let (mean, std) = mean_std(&[2.0, 4.0, 6.0]);
    assert_eq!(mean, 4.0);
    assert!((std - 2.0).abs() < 1e-12);
    assert_eq!(mean_std(&[7.0]), (7.0, 0.0));
    assert_eq!(mean_std(&[]), (0.0, 0.0));
}

#[test]
fn method_names_round_trip_and_unknowns_list_the_choices() {
    for method in Method::all() {
        let parsed: Method = method.name().parse().unwrap();
        assert_eq!(parsed, method);
    }
    let err = "mystery".parse::<Method>().unwrap_err();
    assert!(err.contains("2-stage"));
    assert!(err.contains("directed_quadratic"));
}

#[test]
fn baselines_land_on_their_anchors() {
    let cfg = tiny_experiment(vec![Method::Random, Method::Optimal]);
    let result = run_experiment(&cfg).unwrap();
    assert!(result.failures.is_empty());
    assert_eq!(result.records.len(), 2);
    let random = &result.records[0];
    let optimal = &result.records[1];
    assert_eq!(random.method, Method::Random);
    // the baseline is scored on fresh draws, so it is near 0, not exactly 0
    assert!(random.normalized_dq.abs() < 0.25);
    // truth predictions reproduce the reference arithmetic exactly
    assert_eq!(optimal.normalized_dq, 1.0);
    assert_eq!(optimal.oracle_eval, 6);
}

#[test]
fn shared_artifacts_bill_only_their_first_user() {
    let mut cfg = tiny_experiment(vec![
        Method::Lodl(LossKind::WeightedMse),
        Method::Lodl(LossKind::DirectedWeightedMse),
    ]);
    cfg.n_inits = 2;
    let result = run_experiment(&cfg).unwrap();
    assert!(result.failures.is_empty());
    assert_eq!(result.records.len(), 4);

    let first = &result.records[0];
    // 8 train instances, k + 1 = 21 solves each
    assert_eq!(first.oracle_sample, 8 * 21);
    assert!(first.t_sample > 0.0);
    assert!(first.t_fit > 0.0);

    // same family, second initialization: both caches hit
    let second = &result.records[1];
    assert_eq!(second.oracle_sample, 0);
    assert_eq!(second.t_sample, 0.0);
    assert_eq!(second.t_fit, 0.0);

    // new family: table cached, fit paid once
    let third = &result.records[2];
    assert_eq!(third.oracle_sample, 0);
    assert_eq!(third.t_sample, 0.0);
    assert!(third.t_fit > 0.0);
    assert_eq!(result.records[3].t_fit, 0.0);

    // loss-driven training touches no oracle
    for r in &result.records {
        assert_eq!(r.oracle_train, 0);
        assert_eq!(r.oracle_eval, 6);
        assert!(r.normalized_dq.is_finite());
    }

    assert_eq!(result.timings.len(), 1);
    let t = &result.timings[0];
    assert_eq!((t.k, t.n, t.t_steps), (20, 8, 15));
    assert!(t.t_oracle > 0.0 && t.t_model > 0.0 && t.t_lodl > 0.0);
    assert_eq!(t.t_oracle_surrogate, 0.0);
}

#[test]
fn decision_training_cells_report_their_oracle_usage() {
    let mut cfg = tiny_experiment(vec![Method::Dfl]);
    cfg.dfl_steps = Some(3);
    let result = run_experiment(&cfg).unwrap();
    assert!(result.failures.is_empty());
    let cell = &result.records[0];
    // one relaxed solve per instance per step, plus the initial mark
    assert!(cell.oracle_train >= 4 * 8);
    assert!(result.timings[0].t_oracle_surrogate > 0.0);
}

#[test]
fn identical_configs_produce_identical_reports() {
    let mut cfg = tiny_experiment(vec![
        Method::Optimal,
        Method::TwoStage,
        Method::Lodl(LossKind::DirectedWeightedMse),
    ]);
    cfg.seeds = vec![0, 1];
    let a = run_experiment(&cfg).unwrap();
    let b = run_experiment(&cfg).unwrap();
    assert_eq!(runs_csv(&a.records), runs_csv(&b.records));
    assert_eq!(a.records.len(), 2 * 3);
    // per-seed blocks, ordered by the method list
    assert_eq!(a.records[0].seed, 0);
    assert_eq!(a.records[3].seed, 1);
    assert_eq!(a.records[1].method, Method::TwoStage);
}

#[test]
fn invalid_grids_are_rejected_up_front() {
    let cfg = tiny_experiment(vec![]);
    assert!(matches!(
        run_experiment(&cfg),
        Err(HarnessError::Config(_))
    ));
    let mut cfg = tiny_experiment(vec![Method::Optimal]);
    cfg.n_inits = 0;
    assert!(run_experiment(&cfg).is_err());
}

fn constant_loss(id: u64, dim: usize, weight: f64) -> FittedLoss {
    FittedLoss {
        instance_id: id,
        y: vec![0.5; dim],
        w_min: 1e-2,
        fit_objective: 0.0,
        fit_steps: 0,
        params: LossParams::WeightedMse {
            w: vec![weight; dim],
        },
    }
}

#[test]
fn zero_noise_fresh_tables_reduce_the_gaussian_probe_to_mean_target() {
    // alpha 0 regenerates yhat_k == y, where every family evaluates to 0,
    // so the probe is just the mean clipped regret.
    let config = SampleConfig {
        strategy: PerturbStrategy::All,
        alpha: 0.0,
        k: 3,
        seed: 9,
    };
    let fresh = SampleTable {
        domain: "linear".into(),
        config,
        instances: vec![
            InstanceSamples {
                instance_id: 0,
                dq_truth: 2.0,
                dq: vec![1.0, 2.5, 0.0],
            },
            InstanceSamples {
                instance_id: 1,
                dq_truth: 1.0,
                dq: vec![1.0, 1.0, 1.0],
            },
        ],
    };
    let losses = vec![constant_loss(0, 4, 3.0), constant_loss(1, 4, 3.0)];
    let mae = mae_gaussian_neighborhood(&losses, &fresh).unwrap();
    // targets: [1.0, 0.0, 2.0] and [0, 0, 0] -> mean 0.5
    assert!((mae - 0.5).abs() < 1e-12);
}

#[test]
fn truth_checkpoints_score_zero_empirical_error() {
    let cfg = tiny_experiment(vec![Method::Lodl(LossKind::WeightedMse)]);
    let dataset = cfg.domain.generate(0).unwrap();
    let problem = dataset.problem().unwrap();
    let table = sample_dataset(problem.as_ref(), &cfg.sample, &dataset, Split::Train).unwrap();
    let losses = fit_split(LossKind::WeightedMse, &cfg.fit, &dataset, &table).unwrap();
    let train: Vec<_> = dataset.split(Split::Train).cloned().collect();
    let checkpoint = Checkpoint {
        step: 0,
        predictions: train.iter().map(|i| i.y.clone()).collect(),
    };
    let mae =
        mae_empirical_neighborhood(&losses, &[checkpoint], &train, problem.as_ref()).unwrap();
    // every loss is zero at its anchor and every regret is zero at the truth
    assert_eq!(mae, 0.0);

    let err = mae_empirical_neighborhood(&losses, &[], &train, problem.as_ref());
    assert!(matches!(err, Err(HarnessError::Config(_))));
}

#[test]
fn neighborhood_report_covers_every_family() {
    let mut cfg = tiny_experiment(vec![Method::TwoStage]);
    cfg.steps = 8;
    cfg.sample.k = 12;
    cfg.fit.iters = 25;
    let report = neighborhood_report(&cfg).unwrap();
    assert_eq!(report.domain, "linear");
    assert_eq!(report.rows.len(), 5);
    for row in &report.rows {
        assert!(row.mae_gaussian.is_finite() && row.mae_gaussian >= 0.0);
        assert!(row.mae_empirical.is_finite() && row.mae_empirical >= 0.0);
        assert!(row.normalized_dq.is_finite());
    }
    assert!(report.corr_gaussian_dq.abs() <= 1.0);
    assert!(report.corr_empirical_dq.abs() <= 1.0);
}

#[test]
fn amortization_spreads_the_fixed_cost() {
    let mut cfg = tiny_experiment(vec![Method::Lodl(LossKind::WeightedMse)]);
    cfg.steps = 8;
    let report = benchmark_amortization(&cfg, 4).unwrap();
    assert_eq!(report.train_seconds.len(), 4);
    assert_eq!(report.lodl_per_model.len(), 4);
    assert!(report.fixed_seconds > 0.0);
    assert!(report.two_stage_seconds > 0.0);
    assert!(report.dfl_seconds > 0.0);
    // spreading a positive fixed cost over more models cannot cost more
    assert!(report.lodl_per_model[3] < report.lodl_per_model[0]);
    for per in &report.lodl_per_model {
        assert!(*per > 0.0);
    }
}

#[test]
fn parallel_benchmark_times_every_stage() {
    let mut cfg = tiny_experiment(vec![Method::Lodl(LossKind::WeightedMse)]);
    cfg.steps = 6;
    cfg.dfl_steps = Some(2);
    let points = benchmark_parallel(&cfg, &[1, 2]).unwrap();
    assert_eq!(points.len(), 2);
    assert_eq!(points[0].workers, 1);
    assert_eq!(points[1].workers, 2);
    for p in &points {
        assert!(p.sample_seconds > 0.0);
        assert!(p.fit_seconds > 0.0);
        assert!(p.train_seconds > 0.0);
        assert!(p.dfl_seconds > 0.0);
    }
    assert!(benchmark_parallel(&cfg, &[]).is_err());
    assert!(benchmark_parallel(&cfg, &[0]).is_err());
}

#[test]
fn ablation_rows_follow_the_sweep_order() {
    let base = tiny_experiment(vec![Method::Lodl(LossKind::WeightedMse)]);
    let cfg = AblationConfig {
        base,
        strategies: vec![PerturbStrategy::All, PerturbStrategy::One],
        ks: vec![10, 20],
        families: vec![LossKind::WeightedMse],
    };
    let cells = ablation_suite(&cfg).unwrap();
    assert_eq!(cells.len(), 4);
    assert_eq!(cells[0].strategy, PerturbStrategy::All);
    assert_eq!(cells[0].k, 10);
    assert_eq!(cells[1].k, 20);
    assert_eq!(cells[2].strategy, PerturbStrategy::One);
    for cell in &cells {
        assert_eq!(cell.per_seed.len(), 1);
        assert!(cell.mean_dq.is_finite());
        assert_eq!(cell.std_dq, 0.0);
    }
}

#[test]
fn renderings_expose_the_agreed_columns() {
    let mut cfg = tiny_experiment(vec![Method::Optimal, Method::TwoStage]);
    cfg.steps = 6;
    let result = run_experiment(&cfg).unwrap();
    let csv = runs_csv(&result.records);
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "domain,method,seed,init,normalized_dq,raw_dq"
    );
    let first = lines.next().unwrap();
    assert!(first.starts_with("linear,optimal,0,0,1.000000,"));

    let table = summary_table(&result.records);
    assert!(table.contains("optimal"));
    assert!(table.contains("2-stage"));
    assert!(table.contains("cells"));

    let json = timings_json(&result.timings).unwrap();
    let parsed: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(parsed.as_array().unwrap().len(), 1);
    assert!(parsed[0]["t_model"].as_f64().unwrap() > 0.0);
}
