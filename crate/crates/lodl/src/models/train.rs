//! Training engines for the three regimes, plus exact-oracle evaluation.
//!
//! All regimes run full-batch gradient descent at a fixed rate. The squared
//! error baseline is the loss-driven engine fed unit weights, so the two
//! paths cannot drift apart. Decision-focused training differentiates through
//! the relaxed solver instead and is the only regime that touches an oracle
//! while training.

use std::collections::HashMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor};
use crate::domains::{DecisionProblem, Instance};
use crate::losses::{FittedLoss, LossParams};

use super::{bind, forward_flat, forward_items, Model, ModelError, ModelSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    TwoStage,
    Lodl,
    Dfl,
}

/// Which validation signal picks the returned parameters. Training always
/// runs the full step budget; "stopping" keeps the best scored snapshot.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EarlyStop {
    None,
    /// Mean squared prediction error on the validation split, lower wins.
    ValMse,
    /// Mean exact-oracle decision quality on the validation split, higher
    /// wins. Only decision-focused training may use this: the other regimes
    /// never touch an oracle while training.
    ValDq,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    /// Cadence for prediction snapshots and validation scoring; step 0 and
    /// the final step are always included.
    pub checkpoint_every: usize,
    pub early_stop: EarlyStop,
    pub regime: Regime,
    /// Seeds the parameter initialization; training itself is deterministic.
    pub seed: u64,
}

impl TrainConfig {
    pub fn two_stage(seed: u64) -> TrainConfig {
        TrainConfig {
            steps: 500,
            lr: 0.01,
            checkpoint_every: 25,
            early_stop: EarlyStop::ValMse,
            regime: Regime::TwoStage,
            seed,
        }
    }

    pub fn lodl(seed: u64) -> TrainConfig {
        TrainConfig {
            early_stop: EarlyStop::None,
            regime: Regime::Lodl,
            ..TrainConfig::two_stage(seed)
        }
    }

    pub fn dfl(seed: u64) -> TrainConfig {
        TrainConfig {
            lr: 0.005,
            early_stop: EarlyStop::ValDq,
            regime: Regime::Dfl,
            ..TrainConfig::two_stage(seed)
        }
    }

    fn validate(&self, expected: Regime) -> Result<(), ModelError> {
        if self.regime != expected {
            return Err(ModelError::Config(format!(
                "config regime {:?} does not match the requested training entry point",
                self.regime
            )));
        }
        if self.steps == 0 {
            return Err(ModelError::Config("step budget must be at least 1".into()));
        }
        if self.checkpoint_every == 0 {
            return Err(ModelError::Config("checkpoint cadence must be nonzero".into()));
        }
        if !self.lr.is_finite() || self.lr < 0.0 {
            return Err(ModelError::Config("learning rate must be finite and >= 0".into()));
        }
        let ok = match self.regime {
            Regime::TwoStage => self.early_stop != EarlyStop::ValDq,
            Regime::Lodl => self.early_stop == EarlyStop::None,
            Regime::Dfl => self.early_stop != EarlyStop::ValMse,
        };
        if !ok {
            return Err(ModelError::Config(format!(
                "early stop {:?} is not available under regime {:?}",
                self.early_stop, self.regime
            )));
        }
        Ok(())
    }
}

/// Per-instance predictions captured at one step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub step: usize,
    pub predictions: Vec<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Best validation snapshot when early stopping scored one, else the
    /// final parameters.
    pub model: Model,
    /// Training objective at the parameters after `s` updates, `s = 0..=steps`.
    pub loss_curve: Vec<f64>,
    /// `(step, score)` pairs from the early-stop signal, empty without one.
    pub val_curve: Vec<(usize, f64)>,
    pub checkpoints: Vec<Checkpoint>,
    pub steps_run: usize,
    /// Wall time spent inside relaxed solves; zero outside decision-focused
    /// training.
    pub surrogate_seconds: f64,
}

/// Train on mean squared prediction error.
pub fn train_two_stage(
    spec: ModelSpec,
    train: &[Instance],
    val: &[Instance],
    cfg: &TrainConfig,
) -> Result<TrainOutcome, ModelError> {
    cfg.validate(Regime::TwoStage)?;
    let unit: Vec<FittedLoss> = train
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
        .collect();
    let refs: Vec<&FittedLoss> = unit.iter().collect();
    descend_on_losses(spec, train, &refs, val, cfg)
}

/// Train against per-instance fitted losses. Never receives the decision
/// problem, so the zero-oracle-calls contract holds structurally.
pub fn train_with_lodl(
    spec: ModelSpec,
    train: &[Instance],
    losses: &[FittedLoss],
    cfg: &TrainConfig,
) -> Result<TrainOutcome, ModelError> {
    cfg.validate(Regime::Lodl)?;
    let by_id: HashMap<u64, &FittedLoss> = losses.iter().map(|l| (l.instance_id, l)).collect();
    let mut aligned = Vec::with_capacity(train.len());
    for inst in train {
        let loss = by_id
            .get(&inst.id)
            .copied()
            .ok_or(ModelError::MissingLoss { instance_id: inst.id })?;
        if loss.dim() != inst.y.len() {
            return Err(ModelError::Config(format!(
                "fitted loss for instance {} has dimension {}, label has {}",
                inst.id,
                loss.dim(),
                inst.y.len()
            )));
        }
        aligned.push(loss);
    }
    descend_on_losses(spec, train, &aligned, &[], cfg)
}

/// Train by differentiating realized objective through the relaxed solver.
pub fn train_dfl(
    spec: ModelSpec,
    problem: &dyn DecisionProblem,
    train: &[Instance],
    val: &[Instance],
    cfg: &TrainConfig,
) -> Result<TrainOutcome, ModelError> {
    cfg.validate(Regime::Dfl)?;
    if cfg.early_stop == EarlyStop::ValDq && val.is_empty() {
        return Err(ModelError::Config(
            "decision-quality early stopping needs a nonempty validation split".into(),
        ));
    }
    let mut model = Model::init(spec, cfg.seed)?;
    for inst in train {
        check_instance(&spec, inst)?;
    }
    let n = train.len() as f64;
    let mut curve = Vec::with_capacity(cfg.steps + 1);
    let mut val_curve = Vec::new();
    let mut checkpoints = Vec::new();
    let mut best: Option<(f64, Vec<Tensor>)> = None;
    let mut surrogate_seconds = 0.0;

    for step in 0..=cfg.steps {
        let at_mark = step % cfg.checkpoint_every == 0 || step == cfg.steps;
        let mut tape = Tape::new();
        let params = bind(&mut tape, &model, true);
        let mut snapshots = Vec::new();
        let mut obj_sum = None;
        for inst in train {
            let x = tape.constant(Tensor::new(
                vec![inst.n_items, inst.feat_dim],
                inst.features.clone(),
            )?);
            let yhat = forward_flat(&mut tape, &spec, &params, x, inst.n_items)?;
            if at_mark {
                snapshots.push(tape.value(yhat).data().to_vec());
            }
            let t0 = Instant::now();
            let z = problem.solve_surrogate(&mut tape, yhat)?;
            surrogate_seconds += t0.elapsed().as_secs_f64();
            let obj = problem.objective_on_tape(&mut tape, z, &inst.y)?;
            obj_sum = Some(match obj_sum {
                None => obj,
                Some(acc) => tape.add(acc, obj)?,
            });
        }
        let total = obj_sum.expect("training split is nonempty");
        let scale = tape.scalar_const(-1.0 / n);
        let root = tape.mul(total, scale)?;
        let objective = tape.value(root).item();
        if !objective.is_finite() {
            return Err(ModelError::Diverged { step });
        }
        curve.push(objective);
        if at_mark {
            checkpoints.push(Checkpoint {
                step,
                predictions: snapshots,
            });
            if cfg.early_stop == EarlyStop::ValDq {
                let probe = Model {
                    spec,
                    params: model.params.clone(),
                };
                let (_, mean_dq) = evaluate_dq(&probe, val, problem)?;
                val_curve.push((step, mean_dq));
                if best.as_ref().map_or(true, |(b, _)| mean_dq > *b) {
                    best = Some((mean_dq, model.params.clone()));
                }
            }
        }
        if step == cfg.steps {
            break;
        }
        let mut grads = tape.backward(root)?;
        apply_step(&mut model, &params.vars, &mut grads, cfg.lr)?;
    }

    if let Some((_, params)) = best {
        model.params = params;
    }
    Ok(TrainOutcome {
        model,
        loss_curve: curve,
        val_curve,
        checkpoints,
        steps_run: cfg.steps,
        surrogate_seconds,
    })
}

/// Decision quality of the model's predictions under the exact oracle:
/// per-instance values and their mean.
pub fn evaluate_dq(
    model: &Model,
    instances: &[Instance],
    problem: &dyn DecisionProblem,
) -> Result<(Vec<f64>, f64), ModelError> {
    let mut per = Vec::with_capacity(instances.len());
    for inst in instances {
        let yhat = model.predict(inst)?;
        per.push(problem.decision_quality(&yhat, &inst.y)?);
    }
    let mean = per.iter().sum::<f64>() / per.len().max(1) as f64;
    Ok((per, mean))
}

/// Shared engine for the loss-driven regimes. One batched forward per step
/// over every item row of every instance, with the analytic loss gradients
/// entering the tape as the seed of a single scalar root.
fn descend_on_losses(
    spec: ModelSpec,
    train: &[Instance],
    losses: &[&FittedLoss],
    val: &[Instance],
    cfg: &TrainConfig,
) -> Result<TrainOutcome, ModelError> {
    if train.is_empty() {
        return Err(ModelError::Config("training split is empty".into()));
    }
    if cfg.early_stop == EarlyStop::ValMse && val.is_empty() {
        return Err(ModelError::Config(
            "mean-squared-error early stopping needs a nonempty validation split".into(),
        ));
    }
    let mut model = Model::init(spec, cfg.seed)?;
    let (x, slices) = stack_rows(&spec, train)?;
    let n = train.len() as f64;
    let mut curve = Vec::with_capacity(cfg.steps + 1);
    let mut val_curve = Vec::new();
    let mut checkpoints = Vec::new();
    let mut best: Option<(f64, Vec<Tensor>)> = None;

    for step in 0..=cfg.steps {
        let mut tape = Tape::new();
        let params = bind(&mut tape, &model, true);
        let xv = tape.constant(x.clone());
        let out = forward_items(&mut tape, &spec, &params, xv)?;
        let preds = tape.value(out).clone();
        let mut total = 0.0;
        let mut seed = vec![0.0; preds.numel()];
        for (i, loss) in losses.iter().enumerate() {
            let (start, len) = slices[i];
            let yhat = &preds.data()[start..start + len];
            total += loss.eval(yhat)?;
            for (dst, g) in seed[start..start + len].iter_mut().zip(loss.grad(yhat)?) {
                *dst = g / n;
            }
        }
        let objective = total / n;
        if !objective.is_finite() {
            return Err(ModelError::Diverged { step });
        }
        curve.push(objective);
        if step % cfg.checkpoint_every == 0 || step == cfg.steps {
            checkpoints.push(Checkpoint {
                step,
                predictions: slices
                    .iter()
                    .map(|&(start, len)| preds.data()[start..start + len].to_vec())
                    .collect(),
            });
            if cfg.early_stop == EarlyStop::ValMse {
                let probe = Model {
                    spec,
                    params: model.params.clone(),
                };
                let mse = mean_squared_error(&probe, val)?;
                val_curve.push((step, mse));
                if best.as_ref().map_or(true, |(b, _)| mse < *b) {
                    best = Some((mse, model.params.clone()));
                }
            }
        }
        if step == cfg.steps {
            break;
        }
        let seed = tape.constant(Tensor::new(preds.shape().to_vec(), seed)?);
        let prod = tape.mul(out, seed)?;
        let root = tape.sum(prod)?;
        let mut grads = tape.backward(root)?;
        apply_step(&mut model, &params.vars, &mut grads, cfg.lr)?;
    }

    if let Some((_, params)) = best {
        model.params = params;
    }
    Ok(TrainOutcome {
        model,
        loss_curve: curve,
        val_curve,
        checkpoints,
        steps_run: cfg.steps,
        surrogate_seconds: 0.0,
    })
}

/// Mean over instances of the squared prediction error norm.
fn mean_squared_error(model: &Model, instances: &[Instance]) -> Result<f64, ModelError> {
    let mut total = 0.0;
    for inst in instances {
        let yhat = model.predict(inst)?;
        total += yhat
            .iter()
            .zip(&inst.y)
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>();
    }
    Ok(total / instances.len().max(1) as f64)
}

fn check_instance(spec: &ModelSpec, inst: &Instance) -> Result<(), ModelError> {
    if inst.feat_dim != spec.feat_dim {
        return Err(ModelError::FeatureShape {
            expected: spec.feat_dim,
            got: inst.feat_dim,
        });
    }
    if inst.n_items * spec.out_dim != inst.y.len() {
        return Err(ModelError::OutputShape {
            produced: inst.n_items * spec.out_dim,
            expected: inst.y.len(),
        });
    }
    Ok(())
}

/// Stack every instance's item rows into one `[total_rows, feat_dim]` tensor.
/// Returns it with each instance's `(start, len)` slice of the flattened
/// row-major output, which coincides with the instance's flat prediction.
fn stack_rows(spec: &ModelSpec, train: &[Instance]) -> Result<(Tensor, Vec<(usize, usize)>), ModelError> {
    let mut rows = 0;
    let mut slices = Vec::with_capacity(train.len());
    for inst in train {
        check_instance(spec, inst)?;
        slices.push((rows * spec.out_dim, inst.y.len()));
        rows += inst.n_items;
    }
    let mut data = Vec::with_capacity(rows * spec.feat_dim);
    for inst in train {
        data.extend_from_slice(&inst.features);
    }
    let x = Tensor::new(vec![rows, spec.feat_dim], data)?;
    Ok((x, slices))
}

fn apply_step(
    model: &mut Model,
    vars: &[crate::autodiff::Var],
    grads: &mut crate::autodiff::Gradients,
    lr: f64,
) -> Result<(), ModelError> {
    for (p, var) in model.params.iter_mut().zip(vars) {
        if let Some(g) = grads.take(*var) {
            let stepped: Vec<f64> = p
                .data()
                .iter()
                .zip(g.data())
                .map(|(a, b)| a - lr * b)
                .collect();
            *p = Tensor::new(p.shape().to_vec(), stepped)?;
        }
    }
    Ok(())
}
