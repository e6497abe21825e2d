//! Fitting a loss family to one instance's sampled regrets.
//!
//! Inputs are the error offsets `e_k = ytilde_k - y` (regenerated from the
//! sample table's seed, never stored) and the regret targets
//! `t_k = max(dq_truth - dq_k, 0)`. The truth pair `(0, 0)` is interpolated
//! exactly by every family's parameterization, so including it as an extra
//! row would change nothing: its residual and gradient are identically zero.
//!
//! Two fitting procedures cover the five families. The weighted forms are
//! linear in their parameters, so their bound-constrained least squares is
//! solved exactly by cyclic coordinate descent over the normal equations.
//! Everything can alternatively be fit by projected gradient descent on the
//! squared residual (the weighted forms only for cross-checking the exact
//! solve), full-batch by default, minibatched when configured.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domains::Dataset;
use crate::rng::stream;
use crate::sampling::{perturbation, SampleTable};

use super::{
    eval_at_error, FittedLoss, LossError, LossKind, LossParams, NnLayer,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Floor for every quadratic weight and the ridge term; keeps each
    /// fitted loss strongly convex and bounded away from degeneracy.
    pub w_min: f64,
    /// Rank of the factored quadratic families.
    pub rank: usize,
    /// Hidden width of the network family (three hidden layers this wide).
    pub nn_hidden: usize,
    /// Coordinate-descent sweeps for the exact weighted solve.
    pub sweeps: usize,
    /// Gradient-descent steps for the factored and network families.
    pub iters: usize,
    pub lr: f64,
    /// Minibatch size for the gradient path; `None` uses every sample per
    /// step, which keeps the fit objective monotone for small enough rates.
    pub batch: Option<usize>,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            w_min: 1e-2,
            rank: 2,
            nn_hidden: 100,
            sweeps: 200,
            iters: 100,
            lr: 0.01,
            batch: None,
            seed: 0,
        }
    }
}

impl FitConfig {
    fn validate(&self) -> Result<(), LossError> {
        if !(self.w_min > 0.0) {
            return Err(LossError::Config(format!(
                "w_min must be positive, got {}",
                self.w_min
            )));
        }
        if self.rank == 0 {
            return Err(LossError::Config("rank must be at least 1".into()));
        }
        if self.nn_hidden == 0 {
            return Err(LossError::Config("nn_hidden must be at least 1".into()));
        }
        if self.batch == Some(0) {
            return Err(LossError::Config("batch size must be nonzero".into()));
        }
        Ok(())
    }
}

fn check_inputs(
    cfg: &FitConfig,
    y: &[f64],
    errors: &[Vec<f64>],
    targets: &[f64],
) -> Result<(), LossError> {
    cfg.validate()?;
    if errors.len() != targets.len() {
        return Err(LossError::Dim {
            what: "targets",
            expected: errors.len(),
            got: targets.len(),
        });
    }
    if errors.is_empty() {
        return Err(LossError::Config("no samples to fit".into()));
    }
    for e in errors {
        if e.len() != y.len() {
            return Err(LossError::Dim {
                what: "error offset",
                expected: y.len(),
                got: e.len(),
            });
        }
    }
    Ok(())
}

/// Fit one instance's loss from its error offsets and regret targets, using
/// the exact solve for the weighted families and gradient descent for the
/// rest.
pub fn fit_instance(
    kind: LossKind,
    cfg: &FitConfig,
    instance_id: u64,
    y: &[f64],
    errors: &[Vec<f64>],
    targets: &[f64],
) -> Result<FittedLoss, LossError> {
    check_inputs(cfg, y, errors, targets)?;
    let dim = y.len();
    let (params, steps) = match kind {
        LossKind::WeightedMse => fit_weighted_exact(cfg, dim, errors, targets, false),
        LossKind::DirectedWeightedMse => fit_weighted_exact(cfg, dim, errors, targets, true),
        _ => descend(kind, cfg, instance_id, dim, errors, targets)?,
    };
    Ok(finish(instance_id, y, cfg, params, steps, errors, targets))
}

/// Fit any family by projected gradient descent, including the weighted
/// forms the exact solve normally handles; exists so the two procedures can
/// be compared on the same table.
pub fn fit_instance_gd(
    kind: LossKind,
    cfg: &FitConfig,
    instance_id: u64,
    y: &[f64],
    errors: &[Vec<f64>],
    targets: &[f64],
) -> Result<FittedLoss, LossError> {
    check_inputs(cfg, y, errors, targets)?;
    let (params, steps) = descend(kind, cfg, instance_id, y.len(), errors, targets)?;
    Ok(finish(instance_id, y, cfg, params, steps, errors, targets))
}

fn finish(
    instance_id: u64,
    y: &[f64],
    cfg: &FitConfig,
    params: LossParams,
    steps: usize,
    errors: &[Vec<f64>],
    targets: &[f64],
) -> FittedLoss {
    let n = errors.len() as f64;
    let fit_objective = errors
        .iter()
        .zip(targets)
        .map(|(e, &t)| {
            let r = eval_at_error(&params, cfg.w_min, e) - t;
            r * r
        })
        .sum::<f64>()
        / n;
    FittedLoss {
        instance_id,
        y: y.to_vec(),
        w_min: cfg.w_min,
        fit_objective,
        fit_steps: steps,
        params,
    }
}

/// Fit every sampled instance of a dataset split, in table order. Error
/// offsets are regenerated from the sampling seed; the oracle is not
/// consulted (nothing here ever sees the decision problem).
pub fn fit_split(
    kind: LossKind,
    cfg: &FitConfig,
    dataset: &Dataset,
    table: &SampleTable,
) -> Result<Vec<FittedLoss>, LossError> {
    let by_id: std::collections::HashMap<u64, &crate::domains::Instance> =
        dataset.instances.iter().map(|i| (i.id, i)).collect();
    table
        .instances
        .par_iter()
        .map(|row| {
            let inst = by_id.get(&row.instance_id).ok_or_else(|| {
                LossError::Config(format!(
                    "sample table references instance {} missing from dataset",
                    row.instance_id
                ))
            })?;
            let dim = inst.y.len();
            let errors: Vec<Vec<f64>> = (0..row.dq.len())
                .map(|k| perturbation(&table.config, row.instance_id, k, dim))
                .collect();
            let targets = row.targets();
            fit_instance(kind, cfg, row.instance_id, &inst.y, &errors, &targets)
        })
        .collect()
}

/// Exact solve of `min_{w >= w_min} sum_k (x_k . w - t_k)^2` by cyclic
/// coordinate descent on the normal equations; each coordinate update is the
/// one-dimensional minimizer clamped to the bound, so the iteration descends
/// monotonically to the unique constrained optimum. On one-coordinate
/// perturbation tables the normal matrix is diagonal and the first sweep
/// already lands on the per-coordinate least-squares solution.
fn fit_weighted_exact(
    cfg: &FitConfig,
    dim: usize,
    errors: &[Vec<f64>],
    targets: &[f64],
    directed: bool,
) -> (LossParams, usize) {
    // feature vector per sample: squared errors, split by sign when directed
    let p = if directed { 2 * dim } else { dim };
    let mut a = vec![0.0; p * p]; // X'X
    let mut b = vec![0.0; p]; // X't
    let mut x = vec![0.0; p];
    for (e, &t) in errors.iter().zip(targets) {
        for v in x.iter_mut() {
            *v = 0.0;
        }
        for (l, &el) in e.iter().enumerate() {
            let idx = if directed && el < 0.0 { dim + l } else { l };
            x[idx] += el * el;
        }
        for r in 0..p {
            if x[r] == 0.0 {
                continue;
            }
            b[r] += x[r] * t;
            for c in 0..p {
                a[r * p + c] += x[r] * x[c];
            }
        }
    }
    let mut w = vec![1.0; p];
    let mut sweeps = 0;
    for _ in 0..cfg.sweeps {
        sweeps += 1;
        let mut moved: f64 = 0.0;
        for l in 0..p {
            let all = a[l * p + l];
            if all <= 0.0 {
                // coordinate never touched by any sample; the floor is as
                // good as any value
                w[l] = cfg.w_min;
                continue;
            }
            let mut aw = 0.0;
            for c in 0..p {
                aw += a[l * p + c] * w[c];
            }
            let next = (w[l] + (b[l] - aw) / all).max(cfg.w_min);
            moved = moved.max((next - w[l]).abs());
            w[l] = next;
        }
        if moved < 1e-12 {
            break;
        }
    }
    let params = if directed {
        let w_minus = w.split_off(dim);
        LossParams::DirectedWeightedMse { w_plus: w, w_minus }
    } else {
        LossParams::WeightedMse { w }
    };
    (params, sweeps)
}

/// Pick the sample set for one descent step: all samples, or a drawn subset.
fn batch_indices(rng: &mut impl Rng, n: usize, batch: Option<usize>) -> Vec<usize> {
    match batch {
        None => (0..n).collect(),
        Some(b) if b >= n => (0..n).collect(),
        Some(b) => (0..b).map(|_| rng.gen_range(0..n)).collect(),
    }
}

/// Dimensions and constraints of each family's flat parameter vector.
struct Shape {
    len: usize,
    /// Coordinates below this index are weights clamped at `w_min` after
    /// every step; the factored families have no constrained coordinates.
    clamped: usize,
}

fn shape_of(kind: LossKind, cfg: &FitConfig, dim: usize) -> Shape {
    match kind {
        LossKind::WeightedMse => Shape { len: dim, clamped: dim },
        LossKind::DirectedWeightedMse => Shape {
            len: 2 * dim,
            clamped: 2 * dim,
        },
        LossKind::Quadratic => Shape {
            len: dim * cfg.rank,
            clamped: 0,
        },
        LossKind::DirectedQuadratic => Shape {
            len: 4 * dim * cfg.rank,
            clamped: 0,
        },
        LossKind::Nn => {
            let h = cfg.nn_hidden;
            let sizes = [dim, h, h, h, 1];
            let len = sizes
                .windows(2)
                .map(|w| w[1] * w[0] + w[1])
                .sum::<usize>();
            Shape { len, clamped: 0 }
        }
    }
}

fn init_theta(
    kind: LossKind,
    cfg: &FitConfig,
    instance_id: u64,
    dim: usize,
    errors: &[Vec<f64>],
    targets: &[f64],
) -> Vec<f64> {
    let shape = shape_of(kind, cfg, dim);
    match kind {
        // the exact solve also starts from all-ones; shared start keeps the
        // two procedures comparable
        LossKind::WeightedMse | LossKind::DirectedWeightedMse => vec![1.0; shape.len],
        // The weighted families are the diagonal special case of the factored
        // ones, and their fit is exact. Starting the factors from that solve
        // embeds the best separable loss up to the rank budget; descent then
        // only has to learn the off-axis structure. A random start instead
        // leaves the extrapolation direction to luck, which shows up as
        // occasional models driven to the wrong decision basin.
        LossKind::Quadratic | LossKind::DirectedQuadratic => {
            let mut rng = stream(cfg.seed, "loss_fit_quadratic", &[instance_id]);
            let jitter = 0.02 / (dim as f64).sqrt();
            let mut theta: Vec<f64> =
                (0..shape.len).map(|_| rng.gen_range(-jitter..jitter)).collect();
            let rank = cfg.rank;
            let directed = kind == LossKind::DirectedQuadratic;
            let (params, _) = fit_weighted_exact(cfg, dim, errors, targets, directed);
            match params {
                LossParams::WeightedMse { w } => {
                    // column j carries the j-th heaviest coordinate
                    for (j, &d) in top_coords(&w, rank).iter().enumerate() {
                        theta[d * rank + j] += (w[d] - cfg.w_min).max(0.0).sqrt();
                    }
                }
                LossParams::DirectedWeightedMse { w_plus, w_minus } => {
                    let n = dim * rank;
                    let heaviest: Vec<f64> = w_plus
                        .iter()
                        .zip(&w_minus)
                        .map(|(a, b)| a.max(*b))
                        .collect();
                    for (j, &d) in top_coords(&heaviest, rank).iter().enumerate() {
                        // plus factor: rows picked on nonnegative coordinates
                        // live in the first block, so only they get weight
                        theta[d * rank + j] += (w_plus[d] - cfg.w_min).max(0.0).sqrt();
                        // minus factor: rows picked on negative coordinates
                        theta[3 * n + d * rank + j] +=
                            (w_minus[d] - cfg.w_min).max(0.0).sqrt();
                    }
                }
                _ => unreachable!(),
            }
            theta
        }
        LossKind::Nn => {
            let h = cfg.nn_hidden;
            let sizes = [dim, h, h, h, 1];
            let mut rng = stream(cfg.seed, "loss_fit_nn", &[instance_id]);
            let mut theta = Vec::with_capacity(shape.len);
            for win in sizes.windows(2) {
                let bound = 1.0 / (win[0] as f64).sqrt();
                for _ in 0..win[1] * win[0] + win[1] {
                    theta.push(rng.gen_range(-bound..bound));
                }
            }
            theta
        }
    }
}

fn theta_params(kind: LossKind, cfg: &FitConfig, dim: usize, theta: &[f64]) -> LossParams {
    match kind {
        LossKind::WeightedMse => LossParams::WeightedMse { w: theta.to_vec() },
        LossKind::DirectedWeightedMse => LossParams::DirectedWeightedMse {
            w_plus: theta[..dim].to_vec(),
            w_minus: theta[dim..].to_vec(),
        },
        LossKind::Quadratic => LossParams::Quadratic {
            l: theta.to_vec(),
            rank: cfg.rank,
        },
        LossKind::DirectedQuadratic => {
            let n = dim * cfg.rank;
            LossParams::DirectedQuadratic {
                l_pp: theta[..n].to_vec(),
                l_pm: theta[n..2 * n].to_vec(),
                l_mp: theta[2 * n..3 * n].to_vec(),
                l_mm: theta[3 * n..].to_vec(),
                rank: cfg.rank,
            }
        }
        LossKind::Nn => {
            let h = cfg.nn_hidden;
            let sizes = [dim, h, h, h, 1];
            let mut layers = Vec::with_capacity(4);
            let mut off = 0;
            for win in sizes.windows(2) {
                let (n_in, n_out) = (win[0], win[1]);
                layers.push(NnLayer {
                    w: theta[off..off + n_out * n_in].to_vec(),
                    b: theta[off + n_out * n_in..off + n_out * n_in + n_out].to_vec(),
                    in_dim: n_in,
                    out_dim: n_out,
                });
                off += n_out * n_in + n_out;
            }
            LossParams::Nn { layers }
        }
    }
}

/// Projected full-gradient (or minibatch) descent on the mean squared
/// residual between the family's value and the regret targets. Weight
/// coordinates are clamped to the floor after every step. Returns the
/// parameters and the number of steps taken.
fn descend(
    kind: LossKind,
    cfg: &FitConfig,
    instance_id: u64,
    dim: usize,
    errors: &[Vec<f64>],
    targets: &[f64],
) -> Result<(LossParams, usize), LossError> {
    let shape = shape_of(kind, cfg, dim);
    let mut theta = init_theta(kind, cfg, instance_id, dim);
    let mut rng = stream(cfg.seed, "loss_fit_batches", &[instance_id]);
    let mut grad = vec![0.0; shape.len];
    // Adam moments; the residual is quartic in the factored parameters, so a
    // fixed step either crawls or blows up while the adaptive step does not.
    let mut m1 = vec![0.0; shape.len];
    let mut m2 = vec![0.0; shape.len];
    let (b1, b2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);
    for step in 0..cfg.iters {
        let idx = batch_indices(&mut rng, errors.len(), cfg.batch);
        for g in grad.iter_mut() {
            *g = 0.0;
        }
        let inv = 1.0 / idx.len() as f64;
        let mut objective = 0.0;
        for &k in &idx {
            let e = &errors[k];
            let params = theta_params(kind, cfg, dim, &theta);
            let r = eval_at_error(&params, cfg.w_min, e) - targets[k];
            objective += r * r * inv;
            accumulate_param_grad(kind, cfg, dim, &theta, e, 2.0 * r * inv, &mut grad);
        }
        if !objective.is_finite() {
            return Err(LossError::Diverged { step });
        }
        let c1 = 1.0 - b1.powi(step as i32 + 1);
        let c2 = 1.0 - b2.powi(step as i32 + 1);
        for (((t, &g), m), v) in theta.iter_mut().zip(&grad).zip(&mut m1).zip(&mut m2) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *t -= cfg.lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        }
        for t in theta[..shape.clamped].iter_mut() {
            *t = t.max(cfg.w_min);
        }
    }
    Ok((theta_params(kind, cfg, dim, &theta), cfg.iters))
}

/// Add `coef * d eval / d theta` at error `e` into `grad`.
fn accumulate_param_grad(
    kind: LossKind,
    cfg: &FitConfig,
    dim: usize,
    theta: &[f64],
    e: &[f64],
    coef: f64,
    grad: &mut [f64],
) {
    match kind {
        LossKind::WeightedMse => {
            for (l, &el) in e.iter().enumerate() {
                grad[l] += coef * el * el;
            }
        }
        LossKind::DirectedWeightedMse => {
            for (l, &el) in e.iter().enumerate() {
                let idx = if el < 0.0 { dim + l } else { l };
                grad[idx] += coef * el * el;
            }
        }
        LossKind::Quadratic | LossKind::DirectedQuadratic => {
            let rank = cfg.rank;
            let n = dim * rank;
            // (plus matrix, minus matrix) offsets per squared term; the
            // plain quadratic has one term reading a single matrix
            let terms: &[(usize, usize)] = match kind {
                LossKind::Quadratic => &[(0, 0)],
                _ => &[(0, 1), (2, 3)],
            };
            for &(pos_mat, neg_mat) in terms {
                // u = M' e under the sign-selected rows
                let mut u = vec![0.0; rank];
                for (l, &el) in e.iter().enumerate() {
                    let m = if el >= 0.0 { pos_mat } else { neg_mat };
                    for j in 0..rank {
                        u[j] += theta[m * n + l * rank + j] * el;
                    }
                }
                // d|u|^2 / dM[l, j] = 2 e_l u_j, into the selected row
                for (l, &el) in e.iter().enumerate() {
                    let m = if el >= 0.0 { pos_mat } else { neg_mat };
                    for j in 0..rank {
                        grad[m * n + l * rank + j] += coef * 2.0 * el * u[j];
                    }
                }
            }
        }
        LossKind::Nn => {
            let params = theta_params(kind, cfg, dim, theta);
            let layers = match &params {
                LossParams::Nn { layers } => layers,
                _ => unreachable!(),
            };
            let at_e = nn_forward_cached(layers, e);
            let at_zero = nn_forward_cached(layers, &vec![0.0; dim]);
            // the two passes share parameters: +1 through the pass at e,
            // -1 through the pass at zero
            nn_backprop(layers, &at_e, coef, grad);
            nn_backprop(layers, &at_zero, -coef, grad);
        }
    }
}

struct NnPass {
    /// Post-activation input to each layer (index 0 is the network input).
    acts: Vec<Vec<f64>>,
    /// Pre-activation output of each layer.
    pre: Vec<Vec<f64>>,
}

fn nn_forward_cached(layers: &[NnLayer], x: &[f64]) -> NnPass {
    let mut acts = vec![x.to_vec()];
    let mut pre = Vec::with_capacity(layers.len());
    for (i, layer) in layers.iter().enumerate() {
        let mut out = Vec::new();
        layer.apply(acts.last().unwrap(), &mut out);
        pre.push(out.clone());
        if i + 1 < layers.len() {
            for v in out.iter_mut() {
                *v = v.max(0.0);
            }
        }
        acts.push(out);
    }
    NnPass { acts, pre }
}

/// Accumulate `coef * d out / d theta` into `grad` (layer weights then
/// biases, in layer order, matching the flat parameter layout).
fn nn_backprop(layers: &[NnLayer], pass: &NnPass, coef: f64, grad: &mut [f64]) {
    let mut offsets = Vec::with_capacity(layers.len());
    let mut off = 0;
    for l in layers {
        offsets.push(off);
        off += l.w.len() + l.b.len();
    }
    let mut g = vec![coef];
    for (i, layer) in layers.iter().enumerate().rev() {
        if i + 1 < layers.len() {
            for (gv, &p) in g.iter_mut().zip(&pass.pre[i]) {
                if p <= 0.0 {
                    *gv = 0.0;
                }
            }
        }
        let base = offsets[i];
        let input = &pass.acts[i];
        for r in 0..layer.out_dim {
            let gr = g[r];
            if gr == 0.0 {
                continue;
            }
            for c in 0..layer.in_dim {
                grad[base + r * layer.in_dim + c] += gr * input[c];
            }
            grad[base + layer.w.len() + r] += gr;
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
}

#[cfg(test)]
pub(crate) fn descend_traced(
    kind: LossKind,
    cfg: &FitConfig,
    instance_id: u64,
    y: &[f64],
    errors: &[Vec<f64>],
    targets: &[f64],
) -> (FittedLoss, Vec<f64>) {
    // same stepping as `descend`, but records the full-batch objective
    // before each step so tests can inspect the fit curve
    let dim = y.len();
    let shape = shape_of(kind, cfg, dim);
    let mut theta = init_theta(kind, cfg, instance_id, dim);
    let mut rng = stream(cfg.seed, "loss_fit_batches", &[instance_id]);
    let mut grad = vec![0.0; shape.len];
    let mut curve = Vec::with_capacity(cfg.iters);
    for _ in 0..cfg.iters {
        let idx = batch_indices(&mut rng, errors.len(), cfg.batch);
        for g in grad.iter_mut() {
            *g = 0.0;
        }
        let inv = 1.0 / idx.len() as f64;
        let mut objective = 0.0;
        for &k in &idx {
            let e = &errors[k];
            let params = theta_params(kind, cfg, dim, &theta);
            let r = eval_at_error(&params, cfg.w_min, e) - targets[k];
            objective += r * r * inv;
            accumulate_param_grad(kind, cfg, dim, &theta, e, 2.0 * r * inv, &mut grad);
        }
        curve.push(objective);
        for (t, g) in theta.iter_mut().zip(&grad) {
            *t -= cfg.lr * g;
        }
        for t in theta[..shape.clamped].iter_mut() {
            *t = t.max(cfg.w_min);
        }
    }
    let loss = finish(
        instance_id,
        y,
        cfg,
        theta_params(kind, cfg, dim, &theta),
        cfg.iters,
        errors,
        targets,
    );
    (loss, curve)
}
