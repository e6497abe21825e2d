//! Task-specific surrogate losses fitted per training instance.
//!
//! Each family maps a prediction error `e = yhat - y` to a nonnegative
//! scalar approximating the decision regret sampled from the oracle. All
//! families are exactly zero at the truth (`e = 0`); the four structured
//! ones are convex in `e` by construction (the directed quadratic within
//! each sign orthant), the neural one trades those guarantees for
//! flexibility.

use serde::{Deserialize, Serialize};
use thiserror::Error;

mod fit;
mod io;

pub use fit::{fit_instance, fit_instance_gd, fit_split, FitConfig};
pub use io::{read_fitted_losses, write_fitted_losses, LossFile, LossIoError, LOSS_FORMAT};

#[derive(Debug, Error)]
pub enum LossError {
    #[error("invalid loss config: {0}")]
    Config(String),
    #[error("dimension mismatch: expected {expected}, got {got} in {what}")]
    Dim {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("fit objective became non-finite at step {step}")]
    Diverged { step: usize },
}

/// The five loss families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// `sum_l w_l e_l^2` with `w_l >= w_min`.
    WeightedMse,
    /// `|L' e|^2 + w_min |e|^2`; a low-rank-plus-ridge quadratic form.
    Quadratic,
    /// Per-coordinate weights that differ for over- and under-prediction.
    DirectedWeightedMse,
    /// Low-rank quadratic whose factors switch with the error signs.
    DirectedQuadratic,
    /// A small network minus its value at zero; flexible, no guarantees.
    Nn,
}

impl LossKind {
    pub const ALL: [LossKind; 5] = [
        LossKind::WeightedMse,
        LossKind::Quadratic,
        LossKind::DirectedWeightedMse,
        LossKind::DirectedQuadratic,
        LossKind::Nn,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            LossKind::WeightedMse => "weighted_mse",
            LossKind::Quadratic => "quadratic",
            LossKind::DirectedWeightedMse => "directed_weighted_mse",
            LossKind::DirectedQuadratic => "directed_quadratic",
            LossKind::Nn => "nn",
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = String;

    fn from_str(s: &str) -> Result<LossKind, String> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = LossKind::ALL.iter().map(|k| k.name()).collect();
                format!("unknown loss family {s:?}, expected one of: {}", names.join(", "))
            })
    }
}

/// One fully connected layer, row-major `[out, in]` weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NnLayer {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl NnLayer {
    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for r in 0..self.out_dim {
            let mut acc = self.b[r];
            for c in 0..self.in_dim {
                acc += self.w[r * self.in_dim + c] * x[c];
            }
            out.push(acc);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum LossParams {
    WeightedMse {
        w: Vec<f64>,
    },
    Quadratic {
        /// Row-major `[dim, rank]` factor.
        l: Vec<f64>,
        rank: usize,
    },
    DirectedWeightedMse {
        w_plus: Vec<f64>,
        w_minus: Vec<f64>,
    },
    DirectedQuadratic {
        /// Factor rows used by the first squared term: `l_pp` where the
        /// error coordinate is nonnegative, `l_pm` where it is negative.
        l_pp: Vec<f64>,
        l_pm: Vec<f64>,
        /// Factor rows used by the second squared term, same selection rule.
        l_mp: Vec<f64>,
        l_mm: Vec<f64>,
        rank: usize,
    },
    Nn {
        layers: Vec<NnLayer>,
    },
}

impl LossParams {
    pub fn kind(&self) -> LossKind {
        match self {
            LossParams::WeightedMse { .. } => LossKind::WeightedMse,
            LossParams::Quadratic { .. } => LossKind::Quadratic,
            LossParams::DirectedWeightedMse { .. } => LossKind::DirectedWeightedMse,
            LossParams::DirectedQuadratic { .. } => LossKind::DirectedQuadratic,
            LossParams::Nn { .. } => LossKind::Nn,
        }
    }
}

/// A loss fitted to one training instance, anchored at that instance's label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedLoss {
    pub instance_id: u64,
    /// The anchor label; the loss takes `e = yhat - y`.
    pub y: Vec<f64>,
    pub w_min: f64,
    /// Mean squared residual against the regret targets after fitting.
    pub fit_objective: f64,
    /// Steps (or exact-solve sweeps) the fit actually took.
    pub fit_steps: usize,
    pub params: LossParams,
}

/// `out[l] = sum_j m[l, j] * (sum_i m[i, j] * e[i])`, i.e. `M M' e`, plus the
/// intermediate `M' e` returned for reuse.
fn low_rank_apply(m: &[f64], rank: usize, e: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let dim = e.len();
    let mut mte = vec![0.0; rank];
    for i in 0..dim {
        for j in 0..rank {
            mte[j] += m[i * rank + j] * e[i];
        }
    }
    let mut out = vec![0.0; dim];
    for l in 0..dim {
        for j in 0..rank {
            out[l] += m[l * rank + j] * mte[j];
        }
    }
    (out, mte)
}

/// The factor matrix the directed quadratic uses at error `e`: row `l` comes
/// from `pos` when `e_l >= 0`, from `neg` otherwise.
fn directed_factor(pos: &[f64], neg: &[f64], rank: usize, e: &[f64]) -> Vec<f64> {
    let mut m = vec![0.0; e.len() * rank];
    for (l, &el) in e.iter().enumerate() {
        let src = if el >= 0.0 { pos } else { neg };
        m[l * rank..(l + 1) * rank].copy_from_slice(&src[l * rank..(l + 1) * rank]);
    }
    m
}

impl FittedLoss {
    pub fn dim(&self) -> usize {
        self.y.len()
    }

    fn error(&self, yhat: &[f64]) -> Result<Vec<f64>, LossError> {
        if yhat.len() != self.y.len() {
            return Err(LossError::Dim {
                what: "prediction",
                expected: self.y.len(),
                got: yhat.len(),
            });
        }
        Ok(yhat.iter().zip(&self.y).map(|(a, b)| a - b).collect())
    }

    pub fn eval(&self, yhat: &[f64]) -> Result<f64, LossError> {
        let e = self.error(yhat)?;
        Ok(eval_at_error(&self.params, self.w_min, &e))
    }

    /// Analytic gradient with respect to the prediction.
    pub fn grad(&self, yhat: &[f64]) -> Result<Vec<f64>, LossError> {
        let e = self.error(yhat)?;
        Ok(grad_at_error(&self.params, self.w_min, &e))
    }

    /// The Hessian in `e` for the quadratic families, which is constant
    /// (everywhere, or within the sign orthant of `at` for the directed
    /// form). `None` for the network family.
    pub fn hessian(&self, at_error: &[f64]) -> Option<Vec<f64>> {
        let dim = self.y.len();
        let mut h = match &self.params {
            LossParams::WeightedMse { w } => {
                let mut h = vec![0.0; dim * dim];
                for l in 0..dim {
                    h[l * dim + l] = 2.0 * w[l];
                }
                h
            }
            LossParams::Quadratic { l, rank } => low_rank_hessian(l, *rank, dim, self.w_min),
            LossParams::DirectedWeightedMse { w_plus, w_minus } => {
                let mut h = vec![0.0; dim * dim];
                for l in 0..dim {
                    let w = if at_error[l] >= 0.0 { w_plus[l] } else { w_minus[l] };
                    h[l * dim + l] = 2.0 * w;
                }
                h
            }
            LossParams::DirectedQuadratic {
                l_pp,
                l_pm,
                l_mp,
                l_mm,
                rank,
            } => {
                let mp = directed_factor(l_pp, l_pm, *rank, at_error);
                let mm = directed_factor(l_mp, l_mm, *rank, at_error);
                let mut h = low_rank_hessian(&mp, *rank, dim, self.w_min);
                let second = low_rank_hessian(&mm, *rank, dim, 0.0);
                for (a, b) in h.iter_mut().zip(&second) {
                    *a += b;
                }
                h
            }
            LossParams::Nn { .. } => return None,
        };
        // exact symmetry, free of accumulation-order noise
        for r in 0..dim {
            for c in 0..r {
                let s = 0.5 * (h[r * dim + c] + h[c * dim + r]);
                h[r * dim + c] = s;
                h[c * dim + r] = s;
            }
        }
        Some(h)
    }
}

/// Convexity certificate for the factored quadratic families: the smallest
/// eigenvalue of `B B' + w_min I` for each factor block `B`, estimated by
/// power iteration. Every entry must come out at least `w_min`; a smaller
/// value would mean the parameterization itself is broken. `None` for the
/// families without factor blocks.
pub fn psd_certificate(loss: &FittedLoss) -> Option<Vec<f64>> {
    let dim = loss.dim();
    let blocks: Vec<&[f64]> = match &loss.params {
        LossParams::Quadratic { l, .. } => vec![l],
        LossParams::DirectedQuadratic {
            l_pp,
            l_pm,
            l_mp,
            l_mm,
            ..
        } => vec![l_pp, l_pm, l_mp, l_mm],
        _ => return None,
    };
    let rank = match &loss.params {
        LossParams::Quadratic { rank, .. } | LossParams::DirectedQuadratic { rank, .. } => *rank,
        _ => unreachable!(),
    };
    Some(
        blocks
            .into_iter()
            .map(|b| {
                let mut h = low_rank_hessian(b, rank, dim, loss.w_min);
                for v in h.iter_mut() {
                    *v *= 0.5;
                }
                crate::domains::lambda_min(&h, dim, 400)
            })
            .collect(),
    )
}

/// `2 (M M' + w_min I)`, the Hessian of `|M' e|^2 + w_min |e|^2`.
fn low_rank_hessian(m: &[f64], rank: usize, dim: usize, w_min: f64) -> Vec<f64> {
    let mut h = vec![0.0; dim * dim];
    for r in 0..dim {
        for c in 0..dim {
            let mut acc = 0.0;
            for j in 0..rank {
                acc += m[r * rank + j] * m[c * rank + j];
            }
            h[r * dim + c] = 2.0 * acc;
        }
        h[r * dim + r] += 2.0 * w_min;
    }
    h
}

pub(crate) fn eval_at_error(params: &LossParams, w_min: f64, e: &[f64]) -> f64 {
    match params {
        LossParams::WeightedMse { w } => w.iter().zip(e).map(|(wi, ei)| wi * ei * ei).sum(),
        LossParams::Quadratic { l, rank } => {
            let (_, lte) = low_rank_apply(l, *rank, e);
            let ridge: f64 = e.iter().map(|v| v * v).sum();
            lte.iter().map(|v| v * v).sum::<f64>() + w_min * ridge
        }
        LossParams::DirectedWeightedMse { w_plus, w_minus } => e
            .iter()
            .enumerate()
            .map(|(l, &el)| {
                let w = if el >= 0.0 { w_plus[l] } else { w_minus[l] };
                w * el * el
            })
            .sum(),
        LossParams::DirectedQuadratic {
            l_pp,
            l_pm,
            l_mp,
            l_mm,
            rank,
        } => {
            let mp = directed_factor(l_pp, l_pm, *rank, e);
            let mm = directed_factor(l_mp, l_mm, *rank, e);
            let (_, p) = low_rank_apply(&mp, *rank, e);
            let (_, m) = low_rank_apply(&mm, *rank, e);
            let ridge: f64 = e.iter().map(|v| v * v).sum();
            p.iter().map(|v| v * v).sum::<f64>()
                + m.iter().map(|v| v * v).sum::<f64>()
                + w_min * ridge
        }
        LossParams::Nn { layers } => nn_forward(layers, e) - nn_forward(layers, &vec![0.0; e.len()]),
    }
}

pub(crate) fn grad_at_error(params: &LossParams, w_min: f64, e: &[f64]) -> Vec<f64> {
    match params {
        LossParams::WeightedMse { w } => {
            w.iter().zip(e).map(|(wi, ei)| 2.0 * wi * ei).collect()
        }
        LossParams::Quadratic { l, rank } => {
            let (llte, _) = low_rank_apply(l, *rank, e);
            llte.iter()
                .zip(e)
                .map(|(a, ei)| 2.0 * a + 2.0 * w_min * ei)
                .collect()
        }
        LossParams::DirectedWeightedMse { w_plus, w_minus } => e
            .iter()
            .enumerate()
            .map(|(l, &el)| {
                let w = if el >= 0.0 { w_plus[l] } else { w_minus[l] };
                2.0 * w * el
            })
            .collect(),
        LossParams::DirectedQuadratic {
            l_pp,
            l_pm,
            l_mp,
            l_mm,
            rank,
        } => {
            let mp = directed_factor(l_pp, l_pm, *rank, e);
            let mm = directed_factor(l_mp, l_mm, *rank, e);
            let (p, _) = low_rank_apply(&mp, *rank, e);
            let (m, _) = low_rank_apply(&mm, *rank, e);
            p.iter()
                .zip(&m)
                .zip(e)
                .map(|((a, b), ei)| 2.0 * a + 2.0 * b + 2.0 * w_min * ei)
                .collect()
        }
        LossParams::Nn { layers } => nn_input_grad(layers, e),
    }
}

/// Forward pass: hidden layers are relu, the last layer is linear to one
/// output.
pub(crate) fn nn_forward(layers: &[NnLayer], x: &[f64]) -> f64 {
    let mut cur = x.to_vec();
    let mut next = Vec::new();
    for (i, layer) in layers.iter().enumerate() {
        layer.apply(&cur, &mut next);
        if i + 1 < layers.len() {
            for v in next.iter_mut() {
                *v = v.max(0.0);
            }
        }
        std::mem::swap(&mut cur, &mut next);
    }
    debug_assert_eq!(cur.len(), 1);
    cur[0]
}

/// Gradient of the scalar output with respect to the input vector.
fn nn_input_grad(layers: &[NnLayer], x: &[f64]) -> Vec<f64> {
    // forward, keeping each layer's pre-activation
    let mut pre: Vec<Vec<f64>> = Vec::with_capacity(layers.len());
    let mut cur = x.to_vec();
    for (i, layer) in layers.iter().enumerate() {
        let mut out = Vec::new();
        layer.apply(&cur, &mut out);
        pre.push(out.clone());
        if i + 1 < layers.len() {
            for v in out.iter_mut() {
                *v = v.max(0.0);
            }
        }
        cur = out;
    }
    // backward
    let mut g = vec![1.0];
    for (i, layer) in layers.iter().enumerate().rev() {
        if i + 1 < layers.len() {
            // relu applied after this layer's pre-activation
            for (gv, &p) in g.iter_mut().zip(&pre[i]) {
                if p <= 0.0 {
                    *gv = 0.0;
                }
            }
        }
        let mut gin = vec![0.0; layer.in_dim];
        for r in 0..layer.out_dim {
            let gr = g[r];
            if gr == 0.0 {
                continue;
            }
            for c in 0..layer.in_dim {
                gin[c] += layer.w[r * layer.in_dim + c] * gr;
            }
        }
        g = gin;
    }
    g
}
