use rand::Rng;

use super::*;
use crate::autodiff::{Tape, Tensor};
use crate::domains::{
    gen_linear_dataset, gen_portfolio_dataset, gen_webadv_dataset, Instance, LinearConfig,
    PortfolioConfig, Split, WebAdvConfig,
};
use crate::losses::{FittedLoss, LossParams};

fn scalar_instances(n: usize, items: usize, seed: u64, label: impl Fn(f64) -> f64) -> Vec<Instance> {
    (0..n)
        .map(|i| {
            let mut rng = crate::rng::stream(seed, "model_test_scalar", &[i as u64]);
            let features: Vec<f64> = (0..items).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let y = features.iter().map(|&x| label(x)).collect();
            Instance {
                id: i as u64,
                split: Split::Train,
                features,
                n_items: items,
                feat_dim: 1,
                y,
            }
        })
        .collect()
}

fn random_instances(n: usize, items: usize, feat: usize, out: usize, seed: u64) -> Vec<Instance> {
    (0..n)
        .map(|i| {
            let mut rng = crate::rng::stream(seed, "model_test_random", &[i as u64]);
            Instance {
                id: i as u64,
                split: Split::Train,
                features: (0..items * feat).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                n_items: items,
                feat_dim: feat,
                y: (0..items * out).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            }
        })
        .collect()
}

fn unit_losses(train: &[Instance]) -> Vec<FittedLoss> {
    train
        .iter()
        .map(|inst| FittedLoss {
            instance_id: inst.id,
            y: inst.y.clone(),
            w_min: 1e-2,
            fit_objective: 0.0,
            fit_steps: 0,
            params: LossParams::WeightedMse {
                w: vec![1.0; inst.y.len()],
            },
        })
        .collect()
}

fn scalar_spec() -> ModelSpec {
    ModelSpec {
        kind: ModelKind::Linear,
        feat_dim: 1,
        out_dim: 1,
        hidden: 0,
        tanh_out: false,
    }
}

fn with_coord(model: &Model, block: usize, idx: usize, v: f64) -> Model {
    let mut params = model.params.clone();
    let mut data = params[block].data().to_vec();
    data[idx] = v;
    params[block] = Tensor::new(params[block].shape().to_vec(), data).unwrap();
    Model {
        spec: model.spec,
        params,
    }
}

#[test]
fn linear_identity_model_reproduces_its_inputs() {
    let spec = scalar_spec();
    let model = Model {
        spec,
        params: vec![Tensor::vector(vec![1.0]), Tensor::scalar(0.0)],
    };
    let inst = Instance {
        id: 0,
        split: Split::Test,
        features: vec![0.2, 0.6],
        n_items: 2,
        feat_dim: 1,
        y: vec![0.0, 0.0],
    };
    assert_eq!(model.predict(&inst).unwrap(), vec![0.2, 0.6]);
}

#[test]
fn zero_weight_network_predicts_its_output_bias() {
    let spec = ModelSpec {
        kind: ModelKind::Mlp,
        feat_dim: 2,
        out_dim: 1,
        hidden: 3,
        tanh_out: false,
    };
    let model = Model {
        spec,
        params: vec![
            Tensor::zeros(&[2, 3]),
            Tensor::zeros(&[3]),
            Tensor::zeros(&[3]),
            Tensor::scalar(0.7),
        ],
    };
    let inst = &random_instances(1, 4, 2, 1, 8)[0];
    assert_eq!(model.predict(inst).unwrap(), vec![0.7; 4]);
}

#[test]
fn bounded_head_keeps_predictions_in_the_open_unit_interval() {
    let config = tiny_portfolio();
    let ds = gen_portfolio_dataset(&config, 17).unwrap();
    let inst = ds.split(Split::Train).next().unwrap();
    let spec = ModelSpec {
        kind: ModelKind::Mlp,
        feat_dim: inst.feat_dim,
        out_dim: 1,
        hidden: 6,
        tanh_out: true,
    };
    let model = Model::init(spec, 1).unwrap();
    for p in model.predict(inst).unwrap() {
        assert!(p > -1.0 && p < 1.0);
    }
}

#[test]
fn multi_output_flattening_matches_the_plain_forward() {
    let spec = ModelSpec {
        kind: ModelKind::Mlp,
        feat_dim: 4,
        out_dim: 4,
        hidden: 6,
        tanh_out: false,
    };
    let model = Model::init(spec, 12).unwrap();
    let inst = &random_instances(1, 3, 4, 4, 21)[0];
    let direct = model.predict(inst).unwrap();

    let mut tape = Tape::new();
    let params = bind(&mut tape, &model, false);
    let x = tape
        .constant(Tensor::new(vec![inst.n_items, inst.feat_dim], inst.features.clone()).unwrap());
    let flat = forward_flat(&mut tape, &spec, &params, x, inst.n_items).unwrap();
    assert_eq!(tape.value(flat).data(), &direct[..]);
}

#[test]
fn engine_and_handwritten_descent_agree_on_a_scalar_model() {
    let spec = scalar_spec();
    let train = scalar_instances(3, 5, 40, |x| 0.8 * x - 0.3);
    let cfg = TrainConfig {
        steps: 40,
        lr: 0.05,
        checkpoint_every: 25,
        early_stop: EarlyStop::None,
        regime: Regime::TwoStage,
        seed: 3,
    };
    let outcome = train_two_stage(spec, &train, &[], &cfg).unwrap();

    let init = Model::init(spec, cfg.seed).unwrap();
    let (mut w, mut b) = (init.params[0].data()[0], init.params[1].data()[0]);
    let n = train.len() as f64;
    let mut curve = Vec::new();
    for step in 0..=cfg.steps {
        let mut obj = 0.0;
        let (mut gw, mut gb) = (0.0, 0.0);
        for inst in &train {
            for m in 0..inst.n_items {
                let e = w * inst.features[m] + b - inst.y[m];
                obj += e * e;
                gw += 2.0 * e * inst.features[m];
                gb += 2.0 * e;
            }
        }
        curve.push(obj / n);
        if step == cfg.steps {
            break;
        }
        w -= cfg.lr * gw / n;
        b -= cfg.lr * gb / n;
    }

    assert_eq!(outcome.loss_curve.len(), curve.len());
    for (got, want) in outcome.loss_curve.iter().zip(&curve) {
        assert!((got - want).abs() <= 1e-10 * want.abs().max(1.0), "{got} vs {want}");
    }
    assert!((outcome.model.params[0].data()[0] - w).abs() < 1e-10);
    assert!((outcome.model.params[1].data()[0] - b).abs() < 1e-10);
}

#[test]
fn unit_weight_losses_reproduce_the_squared_error_trajectory() {
    let spec = scalar_spec();
    let train = scalar_instances(4, 6, 41, |x| x * x);
    let cfg_mse = TrainConfig {
        steps: 30,
        early_stop: EarlyStop::None,
        ..TrainConfig::two_stage(7)
    };
    let cfg_lodl = TrainConfig {
        steps: 30,
        ..TrainConfig::lodl(7)
    };
    let se = train_two_stage(spec, &train, &[], &cfg_mse).unwrap();
    let lodl = train_with_lodl(spec, &train, &unit_losses(&train), &cfg_lodl).unwrap();
    assert_eq!(se.loss_curve, lodl.loss_curve);
    assert_eq!(se.model.params, lodl.model.params);
    assert_eq!(se.checkpoints, lodl.checkpoints);
}

#[test]
fn realizable_labels_train_to_vanishing_error() {
    let spec = scalar_spec();
    let train = scalar_instances(8, 6, 42, |x| 2.0 * x);
    let cfg = TrainConfig {
        early_stop: EarlyStop::None,
        ..TrainConfig::two_stage(11)
    };
    let outcome = train_two_stage(spec, &train, &[], &cfg).unwrap();
    assert!(*outcome.loss_curve.last().unwrap() <= 1e-6);
    let slope = outcome.model.params[0].data()[0];
    assert!((slope - 2.0).abs() < 1e-3);
}

#[test]
fn two_stage_beats_the_zero_model_on_curved_data() {
    let spec = scalar_spec();
    let train = scalar_instances(8, 10, 43, |x| x * x * x);
    let cfg = TrainConfig {
        steps: 200,
        early_stop: EarlyStop::None,
        ..TrainConfig::two_stage(11)
    };
    let outcome = train_two_stage(spec, &train, &[], &cfg).unwrap();
    let zero_loss: f64 = train
        .iter()
        .map(|inst| inst.y.iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        / train.len() as f64;
    let last = *outcome.loss_curve.last().unwrap();
    assert!(last < zero_loss);
    assert!(last < outcome.loss_curve[0]);
}

#[test]
fn gradient_step_matches_finite_differences_for_the_loss_engine() {
    for (spec, seed) in [
        (
            ModelSpec {
                kind: ModelKind::Mlp,
                feat_dim: 3,
                out_dim: 2,
                hidden: 4,
                tanh_out: false,
            },
            5u64,
        ),
        (
            ModelSpec {
                kind: ModelKind::Mlp,
                feat_dim: 2,
                out_dim: 1,
                hidden: 3,
                tanh_out: true,
            },
            6u64,
        ),
    ] {
        let train = random_instances(4, 3, spec.feat_dim, spec.out_dim, 50 + seed);
        let losses: Vec<FittedLoss> = train
            .iter()
            .map(|inst| {
                let mut rng = crate::rng::stream(60, "model_test_weights", &[inst.id]);
                FittedLoss {
                    instance_id: inst.id,
                    y: inst.y.clone(),
                    w_min: 1e-2,
                    fit_objective: 0.0,
                    fit_steps: 0,
                    params: LossParams::WeightedMse {
                        w: (0..inst.y.len()).map(|_| rng.gen_range(0.5..2.0)).collect(),
                    },
                }
            })
            .collect();
        let cfg = TrainConfig {
            steps: 1,
            lr: 1.0,
            checkpoint_every: 1,
            early_stop: EarlyStop::None,
            regime: Regime::Lodl,
            seed,
        };
        let init = Model::init(spec, seed).unwrap();
        let stepped = train_with_lodl(spec, &train, &losses, &cfg).unwrap().model;

        let objective = |m: &Model| -> f64 {
            train
                .iter()
                .zip(&losses)
                .map(|(inst, loss)| loss.eval(&m.predict(inst).unwrap()).unwrap())
                .sum::<f64>()
                / train.len() as f64
        };
        let h = 1e-5;
        for block in 0..init.params.len() {
            for idx in 0..init.params[block].numel() {
                let grad = init.params[block].data()[idx] - stepped.params[block].data()[idx];
                let at = init.params[block].data()[idx];
                let up = objective(&with_coord(&init, block, idx, at + h));
                let down = objective(&with_coord(&init, block, idx, at - h));
                let fd = (up - down) / (2.0 * h);
                assert!(
                    (grad - fd).abs() <= 1e-4 * fd.abs().max(1.0),
                    "block {block} coord {idx}: engine {grad} vs fd {fd}"
                );
            }
        }
    }
}

#[test]
fn gradient_step_matches_finite_differences_through_the_relaxed_solver() {
    let config = LinearConfig {
        n_items: 12,
        budget: 3,
        n_train: 5,
        n_val: 2,
        n_test: 2,
        ..LinearConfig::default()
    };
    let ds = gen_linear_dataset(&config, 23).unwrap();
    let problem = ds.problem().unwrap();
    let train: Vec<Instance> = ds.split(Split::Train).cloned().collect();
    let spec = scalar_spec();
    let cfg = TrainConfig {
        steps: 1,
        lr: 1.0,
        checkpoint_every: 1,
        early_stop: EarlyStop::None,
        regime: Regime::Dfl,
        seed: 9,
    };
    let init = Model::init(spec, cfg.seed).unwrap();
    let stepped = train_dfl(spec, problem.as_ref(), &train, &[], &cfg).unwrap().model;

    let objective = |m: &Model| -> f64 {
        let mut total = 0.0;
        for inst in &train {
            let mut tape = Tape::new();
            let params = bind(&mut tape, m, false);
            let x = tape
                .constant(Tensor::new(vec![inst.n_items, 1], inst.features.clone()).unwrap());
            let yhat = forward_flat(&mut tape, &m.spec, &params, x, inst.n_items).unwrap();
            let z = problem.solve_surrogate(&mut tape, yhat).unwrap();
            let obj = problem.objective_on_tape(&mut tape, z, &inst.y).unwrap();
            total += tape.value(obj).item();
        }
        -total / train.len() as f64
    };
    let h = 1e-5;
    for block in 0..init.params.len() {
        for idx in 0..init.params[block].numel() {
            let grad = init.params[block].data()[idx] - stepped.params[block].data()[idx];
            let at = init.params[block].data()[idx];
            let up = objective(&with_coord(&init, block, idx, at + h));
            let down = objective(&with_coord(&init, block, idx, at - h));
            let fd = (up - down) / (2.0 * h);
            assert!(
                (grad - fd).abs() <= 1e-4 * fd.abs().max(1.0),
                "block {block} coord {idx}: engine {grad} vs fd {fd}"
            );
        }
    }
}

#[test]
fn learning_rate_zero_leaves_the_model_unchanged() {
    let config = LinearConfig {
        n_items: 8,
        budget: 2,
        n_train: 3,
        n_val: 2,
        n_test: 2,
        ..LinearConfig::default()
    };
    let ds = gen_linear_dataset(&config, 31).unwrap();
    let problem = ds.problem().unwrap();
    let train: Vec<Instance> = ds.split(Split::Train).cloned().collect();
    let spec = scalar_spec();
    let cfg = TrainConfig {
        steps: 1,
        lr: 0.0,
        checkpoint_every: 1,
        early_stop: EarlyStop::None,
        regime: Regime::Dfl,
        seed: 2,
    };
    let outcome = train_dfl(spec, problem.as_ref(), &train, &[], &cfg).unwrap();
    assert_eq!(outcome.model.params, Model::init(spec, 2).unwrap().params);

    let cfg = TrainConfig {
        steps: 1,
        lr: 0.0,
        checkpoint_every: 1,
        early_stop: EarlyStop::None,
        regime: Regime::TwoStage,
        seed: 2,
    };
    let outcome = train_two_stage(spec, &train, &[], &cfg).unwrap();
    assert_eq!(outcome.model.params, Model::init(spec, 2).unwrap().params);
}

#[test]
fn training_is_deterministic_across_reruns() {
    let spec = ModelSpec {
        kind: ModelKind::Mlp,
        feat_dim: 2,
        out_dim: 1,
        hidden: 5,
        tanh_out: false,
    };
    let train = random_instances(5, 4, 2, 1, 70);
    let losses = unit_losses(&train);
    let cfg = TrainConfig {
        steps: 25,
        ..TrainConfig::lodl(13)
    };
    let a = train_with_lodl(spec, &train, &losses, &cfg).unwrap();
    let b = train_with_lodl(spec, &train, &losses, &cfg).unwrap();
    assert_eq!(a.loss_curve, b.loss_curve);
    assert_eq!(a.model.params, b.model.params);
}

#[test]
fn loss_driven_training_never_touches_the_oracle() {
    let config = LinearConfig {
        n_items: 10,
        budget: 2,
        n_train: 4,
        n_val: 2,
        n_test: 2,
        ..LinearConfig::default()
    };
    let ds = gen_linear_dataset(&config, 37).unwrap();
    let problem = ds.problem().unwrap();
    let train: Vec<Instance> = ds.split(Split::Train).cloned().collect();
    let losses = unit_losses(&train);
    let cfg = TrainConfig {
        steps: 20,
        ..TrainConfig::lodl(1)
    };
    let before = (
        problem.counters().exact_calls(),
        problem.counters().surrogate_calls(),
    );
    train_with_lodl(scalar_spec(), &train, &losses, &cfg).unwrap();
    let after = (
        problem.counters().exact_calls(),
        problem.counters().surrogate_calls(),
    );
    assert_eq!(before, after);
}

#[test]
fn decision_training_interleaves_solver_calls() {
    let config = LinearConfig {
        n_items: 10,
        budget: 2,
        n_train: 3,
        n_val: 2,
        n_test: 2,
        ..LinearConfig::default()
    };
    let ds = gen_linear_dataset(&config, 39).unwrap();
    let problem = ds.problem().unwrap();
    let train: Vec<Instance> = ds.split(Split::Train).cloned().collect();
    let val: Vec<Instance> = ds.split(Split::Val).cloned().collect();
    let cfg = TrainConfig {
        steps: 4,
        checkpoint_every: 2,
        ..TrainConfig::dfl(3)
    };
    train_dfl(scalar_spec(), problem.as_ref(), &train, &val, &cfg).unwrap();
    let surrogate = problem.counters().surrogate_calls();
    assert!(surrogate >= cfg.steps as u64);
    assert_eq!(surrogate, (cfg.steps as u64 + 1) * train.len() as u64);
    // marks at steps 0, 2, 4; each scores every validation instance exactly
    assert_eq!(problem.counters().exact_calls(), 3 * val.len() as u64);
}

#[test]
fn evaluated_quality_never_exceeds_the_optimum() {
    let config = LinearConfig {
        n_items: 20,
        budget: 3,
        n_train: 4,
        n_val: 2,
        n_test: 6,
        ..LinearConfig::default()
    };
    let ds = gen_linear_dataset(&config, 51).unwrap();
    let problem = ds.problem().unwrap();
    let test: Vec<Instance> = ds.split(Split::Test).cloned().collect();
    let model = Model::init(scalar_spec(), 4).unwrap();
    let (per, mean) = evaluate_dq(&model, &test, problem.as_ref()).unwrap();
    let (per2, _) = evaluate_dq(&model, &test, problem.as_ref()).unwrap();
    assert_eq!(per, per2);
    let mut total = 0.0;
    for (dq, inst) in per.iter().zip(&test) {
        let best = problem.decision_quality(&inst.y, &inst.y).unwrap();
        assert!(*dq <= best + 1e-9);
        total += dq;
    }
    assert!((mean - total / test.len() as f64).abs() < 1e-12);
}

#[test]
fn rescaling_outputs_leaves_selection_quality_unchanged() {
    let config = LinearConfig {
        n_items: 15,
        budget: 3,
        n_train: 3,
        n_val: 2,
        n_test: 8,
        ..LinearConfig::default()
    };
    let ds = gen_linear_dataset(&config, 53).unwrap();
    let problem = ds.problem().unwrap();
    let test: Vec<Instance> = ds.split(Split::Test).cloned().collect();
    let model = Model::init(scalar_spec(), 6).unwrap();
    let (base, _) = evaluate_dq(&model, &test, problem.as_ref()).unwrap();
    for c in [0.5, 2.0, 7.0] {
        let scaled = Model {
            spec: model.spec,
            params: model
                .params
                .iter()
                .map(|t| {
                    let data = t.data().iter().map(|v| c * v).collect();
                    Tensor::new(t.shape().to_vec(), data).unwrap()
                })
                .collect(),
        };
        let (got, _) = evaluate_dq(&scaled, &test, problem.as_ref()).unwrap();
        assert_eq!(base, got, "scale {c}");
    }
}

#[test]
fn runaway_learning_rate_reports_the_diverging_step() {
    let spec = scalar_spec();
    let train = scalar_instances(3, 4, 44, |x| x);
    let cfg = TrainConfig {
        steps: 40,
        lr: 1e12,
        early_stop: EarlyStop::None,
        ..TrainConfig::two_stage(2)
    };
    match train_two_stage(spec, &train, &[], &cfg) {
        Err(ModelError::Diverged { step }) => assert!(step >= 1),
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn validation_tracking_returns_the_best_snapshot() {
    let spec = scalar_spec();
    let train = scalar_instances(8, 6, 45, |x| 2.0 * x);
    let mut val = scalar_instances(4, 6, 46, |x| -2.0 * x);
    for inst in &mut val {
        inst.split = Split::Val;
    }
    let cfg = TrainConfig {
        steps: 100,
        ..TrainConfig::two_stage(5)
    };
    let outcome = train_two_stage(spec, &train, &val, &cfg).unwrap();
    // fitting the opposite-slope training data can only hurt validation
    assert_eq!(outcome.model.params, Model::init(spec, 5).unwrap().params);
    assert!(outcome.val_curve.first().unwrap().1 < outcome.val_curve.last().unwrap().1);
    assert_eq!(outcome.val_curve.len(), 5);
}

#[test]
fn checkpoints_cover_start_cadence_and_finish() {
    let spec = scalar_spec();
    let train = scalar_instances(3, 5, 47, |x| x);
    let cfg = TrainConfig {
        steps: 47,
        early_stop: EarlyStop::None,
        ..TrainConfig::two_stage(1)
    };
    let outcome = train_two_stage(spec, &train, &[], &cfg).unwrap();
    let steps: Vec<usize> = outcome.checkpoints.iter().map(|c| c.step).collect();
    assert_eq!(steps, vec![0, 25, 47]);
    for ck in &outcome.checkpoints {
        assert_eq!(ck.predictions.len(), train.len());
        for (pred, inst) in ck.predictions.iter().zip(&train) {
            assert_eq!(pred.len(), inst.y.len());
        }
    }
    assert_eq!(outcome.loss_curve.len(), cfg.steps + 1);
    assert_eq!(outcome.steps_run, cfg.steps);
}

#[test]
fn missing_fitted_loss_is_reported_by_instance() {
    let spec = scalar_spec();
    let train = scalar_instances(3, 4, 48, |x| x);
    let mut losses = unit_losses(&train);
    losses.remove(1);
    let cfg = TrainConfig::lodl(1);
    match train_with_lodl(spec, &train, &losses, &cfg) {
        Err(ModelError::MissingLoss { instance_id }) => assert_eq!(instance_id, 1),
        other => panic!("expected missing loss, got {other:?}"),
    }
}

#[test]
fn mismatched_regimes_are_rejected() {
    let spec = scalar_spec();
    let train = scalar_instances(2, 3, 49, |x| x);
    let losses = unit_losses(&train);

    let bad_stop = TrainConfig {
        early_stop: EarlyStop::ValMse,
        ..TrainConfig::lodl(1)
    };
    assert!(matches!(
        train_with_lodl(spec, &train, &losses, &bad_stop),
        Err(ModelError::Config(_))
    ));

    let wrong_entry = TrainConfig::two_stage(1);
    assert!(matches!(
        train_with_lodl(spec, &train, &losses, &wrong_entry),
        Err(ModelError::Config(_))
    ));

    let zero_steps = TrainConfig {
        steps: 0,
        ..TrainConfig::lodl(1)
    };
    assert!(matches!(
        train_with_lodl(spec, &train, &losses, &zero_steps),
        Err(ModelError::Config(_))
    ));
}

#[test]
fn checkpoint_file_round_trips_the_model() {
    let spec = ModelSpec {
        kind: ModelKind::Mlp,
        feat_dim: 3,
        out_dim: 2,
        hidden: 4,
        tanh_out: true,
    };
    let model = Model::init(spec, 77).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    write_model(&path, &model, Some(&TrainConfig::lodl(77))).unwrap();
    let (file, back) = read_model(&path).unwrap();
    assert_eq!(file.format, MODEL_FORMAT);
    assert_eq!(back.spec, model.spec);
    assert_eq!(back.params, model.params);
    assert_eq!(file.train.unwrap().regime, Regime::Lodl);

    let mut raw: ModelFile = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    raw.format = "something.else".into();
    std::fs::write(&path, serde_json::to_string(&raw).unwrap()).unwrap();
    assert!(matches!(read_model(&path), Err(ModelIoError::Format { .. })));

    raw.format = MODEL_FORMAT.into();
    raw.params.pop();
    std::fs::write(&path, serde_json::to_string(&raw).unwrap()).unwrap();
    assert!(matches!(read_model(&path), Err(ModelIoError::ParamCount { .. })));
}

fn tiny_portfolio() -> PortfolioConfig {
    PortfolioConfig {
        n_assets: 4,
        n_train: 3,
        n_val: 2,
        n_test: 2,
        window: 8,
        n_factors: 2,
        surrogate_steps: 10,
        ..PortfolioConfig::default()
    }
}

#[test]
fn relaxed_training_runs_on_the_ctr_domain() {
    let config = WebAdvConfig {
        n_websites: 3,
        n_users: 4,
        budget: 1,
        n_train: 4,
        n_val: 2,
        n_test: 2,
        ascent_steps: 15,
        ..WebAdvConfig::default()
    };
    let ds = gen_webadv_dataset(&config, 61).unwrap();
    let problem = ds.problem().unwrap();
    let train: Vec<Instance> = ds.split(Split::Train).cloned().collect();
    let val: Vec<Instance> = ds.split(Split::Val).cloned().collect();
    let spec = ModelSpec {
        kind: ModelKind::Mlp,
        feat_dim: 4,
        out_dim: 4,
        hidden: 8,
        tanh_out: false,
    };
    let cfg = TrainConfig {
        steps: 3,
        checkpoint_every: 2,
        lr: 0.01,
        ..TrainConfig::dfl(8)
    };
    let outcome = train_dfl(spec, problem.as_ref(), &train, &val, &cfg).unwrap();
    assert!(outcome.loss_curve.iter().all(|v| v.is_finite()));
    assert_eq!(outcome.checkpoints.last().unwrap().predictions[0].len(), 12);
    assert!(outcome.surrogate_seconds > 0.0);
}

#[test]
fn relaxed_training_runs_on_the_allocation_domain() {
    let config = tiny_portfolio();
    let ds = gen_portfolio_dataset(&config, 67).unwrap();
    let problem = ds.problem().unwrap();
    let train: Vec<Instance> = ds.split(Split::Train).cloned().collect();
    let val: Vec<Instance> = ds.split(Split::Val).cloned().collect();
    let spec = ModelSpec {
        kind: ModelKind::Mlp,
        feat_dim: train[0].feat_dim,
        out_dim: 1,
        hidden: 6,
        tanh_out: true,
    };
    let cfg = TrainConfig {
        steps: 2,
        checkpoint_every: 1,
        ..TrainConfig::dfl(8)
    };
    let outcome = train_dfl(spec, problem.as_ref(), &train, &val, &cfg).unwrap();
    assert!(outcome.loss_curve.iter().all(|v| v.is_finite()));
    assert_eq!(outcome.val_curve.len(), 3);
}

#[test]
fn decision_training_improves_the_training_objective() {
    let config = LinearConfig {
        n_items: 12,
        budget: 3,
        n_train: 6,
        n_val: 3,
        n_test: 2,
        sinkhorn_iters: 60,
        ..LinearConfig::default()
    };
    let ds = gen_linear_dataset(&config, 71).unwrap();
    let problem = ds.problem().unwrap();
    let train: Vec<Instance> = ds.split(Split::Train).cloned().collect();
    let val: Vec<Instance> = ds.split(Split::Val).cloned().collect();
    let cfg = TrainConfig {
        steps: 60,
        lr: 0.01,
        ..TrainConfig::dfl(15)
    };
    let outcome = train_dfl(scalar_spec(), problem.as_ref(), &train, &val, &cfg).unwrap();
    assert!(outcome.loss_curve.last().unwrap() < &outcome.loss_curve[0]);
}
