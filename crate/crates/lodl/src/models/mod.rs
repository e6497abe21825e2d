//! Predictive models and the three training regimes.
//!
//! A model maps one item's feature vector to that item's slice of the
//! prediction; per-item outputs concatenate into the full prediction for an
//! instance. The same forward definition runs everywhere: evaluation builds
//! a throwaway tape, so recorded and unrecorded passes are bit-identical.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AdError, Tape, Tensor, Var};
use crate::domains::{DomainConfig, DomainError, Instance};
use crate::losses::LossError;

mod io;
mod train;

pub use io::{read_model, write_model, ModelFile, ModelIoError, MODEL_FORMAT};
pub use train::{
    evaluate_dq, train_dfl, train_two_stage, train_with_lodl, Checkpoint, EarlyStop, Regime,
    TrainConfig, TrainOutcome,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("feature shape mismatch: model expects {expected}, instance has {got}")]
    FeatureShape { expected: usize, got: usize },
    #[error("prediction length {produced} does not match label length {expected}")]
    OutputShape { produced: usize, expected: usize },
    #[error("no fitted loss for training instance {instance_id}")]
    MissingLoss { instance_id: u64 },
    #[error("training loss became non-finite at step {step}")]
    Diverged { step: usize },
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Ad(#[from] AdError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// One affine map per item: slope matrix and intercept.
    Linear,
    /// Two fully connected layers with a relu between them.
    Mlp,
}

/// Architecture of a model, fixed per domain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub feat_dim: usize,
    /// Predictions each item contributes; the instance prediction is the
    /// concatenation over items.
    pub out_dim: usize,
    /// Hidden width of the two-layer network; ignored by the linear model.
    pub hidden: usize,
    /// Squash outputs through tanh (used where labels live in a bounded
    /// symmetric range).
    pub tanh_out: bool,
}

impl ModelSpec {
    /// The architecture each benchmark domain uses: an affine model for the
    /// synthetic top-k domain, a two-layer 500-unit network elsewhere, with
    /// a tanh output head on the bounded-returns domain.
    pub fn for_domain(config: &DomainConfig) -> ModelSpec {
        match config {
            DomainConfig::Linear(_) => ModelSpec {
                kind: ModelKind::Linear,
                feat_dim: 1,
                out_dim: 1,
                hidden: 0,
                tanh_out: false,
            },
            DomainConfig::WebAdv(c) => ModelSpec {
                kind: ModelKind::Mlp,
                feat_dim: c.n_users,
                out_dim: c.n_users,
                hidden: 500,
                tanh_out: false,
            },
            DomainConfig::Portfolio(_) => ModelSpec {
                kind: ModelKind::Mlp,
                feat_dim: crate::domains::PORTFOLIO_FEAT_DIM,
                out_dim: 1,
                hidden: 500,
                tanh_out: true,
            },
        }
    }

    /// Shapes of the flat parameter tensors, in storage order. Single-output
    /// heads are plain vectors (with rank-0 biases) so batched forwards stay
    /// one-dimensional.
    fn param_shapes(&self) -> Vec<Vec<usize>> {
        let head_bias = if self.out_dim == 1 {
            vec![]
        } else {
            vec![self.out_dim]
        };
        match self.kind {
            ModelKind::Linear => {
                if self.out_dim == 1 {
                    vec![vec![self.feat_dim], head_bias]
                } else {
                    vec![vec![self.feat_dim, self.out_dim], head_bias]
                }
            }
            ModelKind::Mlp => {
                let head = if self.out_dim == 1 {
                    vec![self.hidden]
                } else {
                    vec![self.hidden, self.out_dim]
                };
                vec![
                    vec![self.feat_dim, self.hidden],
                    vec![self.hidden],
                    head,
                    head_bias,
                ]
            }
        }
    }

    fn validate(&self) -> Result<(), ModelError> {
        if self.feat_dim == 0 || self.out_dim == 0 {
            return Err(ModelError::Config(
                "feature and output dimensions must be nonzero".into(),
            ));
        }
        if self.kind == ModelKind::Mlp && self.hidden == 0 {
            return Err(ModelError::Config("mlp hidden width must be nonzero".into()));
        }
        Ok(())
    }
}

/// A model: its architecture and flat parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub spec: ModelSpec,
    pub params: Vec<Tensor>,
}

impl Model {
    /// Initialize with each tensor uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
    pub fn init(spec: ModelSpec, seed: u64) -> Result<Model, ModelError> {
        spec.validate()?;
        use rand::Rng;
        let fan_ins: Vec<usize> = match spec.kind {
            ModelKind::Linear => vec![spec.feat_dim, spec.feat_dim],
            ModelKind::Mlp => vec![spec.feat_dim, spec.feat_dim, spec.hidden, spec.hidden],
        };
        let params = spec
            .param_shapes()
            .into_iter()
            .zip(fan_ins)
            .enumerate()
            .map(|(i, (shape, fan_in))| {
                let mut rng = crate::rng::stream(seed, "model_init", &[i as u64]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let n: usize = shape.iter().product();
                let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
                Tensor::new(shape, data).expect("shape matches data")
            })
            .collect();
        Ok(Model { spec, params })
    }

    /// Predict one instance: per-item outputs concatenated into a flat
    /// vector matching the instance's label length.
    pub fn predict(&self, instance: &Instance) -> Result<Vec<f64>, ModelError> {
        if instance.feat_dim != self.spec.feat_dim {
            return Err(ModelError::FeatureShape {
                expected: self.spec.feat_dim,
                got: instance.feat_dim,
            });
        }
        let mut tape = Tape::new();
        let vars = bind(&mut tape, self, false);
        let x = tape.constant(Tensor::new(
            vec![instance.n_items, instance.feat_dim],
            instance.features.clone(),
        )?);
        let out = forward_items(&mut tape, &self.spec, &vars, x)?;
        let produced = tape.value(out).numel();
        if produced != instance.y.len() {
            return Err(ModelError::OutputShape {
                produced,
                expected: instance.y.len(),
            });
        }
        Ok(tape.value(out).data().to_vec())
    }
}

/// Tape handles for the model parameters, in storage order.
pub(crate) struct BoundParams {
    pub vars: Vec<Var>,
}

/// Put the parameters on a tape, as gradient-tracked inputs when training.
pub(crate) fn bind(tape: &mut Tape, model: &Model, trainable: bool) -> BoundParams {
    let vars = model
        .params
        .iter()
        .map(|t| {
            if trainable {
                tape.input(t.clone())
            } else {
                tape.constant(t.clone())
            }
        })
        .collect();
    BoundParams { vars }
}

/// Forward a stack of item feature rows `[rows, feat_dim]`. Single-output
/// models return `[rows]`; multi-output models return `[rows, out_dim]`.
/// Stacking rows across instances batches every instance through one chain.
pub(crate) fn forward_items(
    tape: &mut Tape,
    spec: &ModelSpec,
    params: &BoundParams,
    x: Var,
) -> Result<Var, AdError> {
    let v = &params.vars;
    let pre = match spec.kind {
        ModelKind::Linear => {
            let wx = tape.matmul(x, v[0])?;
            tape.add(wx, v[1])?
        }
        ModelKind::Mlp => {
            let h_pre = tape.matmul(x, v[0])?;
            let h_pre = tape.add(h_pre, v[1])?;
            let h = tape.relu(h_pre)?;
            let o = tape.matmul(h, v[2])?;
            tape.add(o, v[3])?
        }
    };
    if spec.tanh_out {
        tape.tanh(pre)
    } else {
        Ok(pre)
    }
}

/// Forward one instance to a flat `[n_items * out_dim]` prediction vector,
/// the shape the decision surrogates consume. Multi-output rows are placed
/// into the flat vector through constant placement matrices, which keeps the
/// whole chain inside the recorded ops.
pub(crate) fn forward_flat(
    tape: &mut Tape,
    spec: &ModelSpec,
    params: &BoundParams,
    x: Var,
    n_items: usize,
) -> Result<Var, AdError> {
    let out = forward_items(tape, spec, params, x)?;
    if spec.out_dim == 1 {
        return Ok(out);
    }
    let dim = n_items * spec.out_dim;
    let mut flat = None;
    for i in 0..n_items {
        let mut pick = vec![0.0; n_items];
        pick[i] = 1.0;
        let pick = tape.constant(Tensor::vector(pick));
        let row = tape.matmul(pick, out)?;
        let mut place = vec![0.0; spec.out_dim * dim];
        for j in 0..spec.out_dim {
            place[j * dim + i * spec.out_dim + j] = 1.0;
        }
        let place = tape.constant(Tensor::new(vec![spec.out_dim, dim], place)?);
        let placed = tape.matmul(row, place)?;
        flat = Some(match flat {
            None => placed,
            Some(acc) => tape.add(acc, placed)?,
        });
    }
    Ok(flat.expect("at least one item"))
}

#[cfg(test)]
mod tests;
