use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    DomainConfig, DomainError, Dataset, DecisionProblem, Instance, OracleCounters, Split,
};
use crate::autodiff::{Tape, Var};
use crate::rng::stream;

/// Top-B selection over resources whose utility follows a cubic curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearConfig {
    pub n_items: usize,
    pub budget: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    /// Entropy regularization of the differentiable top-k relaxation.
    pub sinkhorn_eps: f64,
    pub sinkhorn_iters: usize,
}

impl Default for LinearConfig {
    fn default() -> Self {
        LinearConfig {
            n_items: 50,
            budget: 1,
            n_train: 200,
            n_val: 200,
            n_test: 400,
            sinkhorn_eps: 0.1,
            sinkhorn_iters: 100,
        }
    }
}

impl LinearConfig {
    fn validate(&self) -> Result<(), DomainError> {
        if self.n_items == 0 || self.budget == 0 || self.budget > self.n_items {
            return Err(DomainError::Config(format!(
                "budget {} must be in 1..={} items",
                self.budget, self.n_items
            )));
        }
        if self.n_train == 0 || self.n_val == 0 || self.n_test == 0 {
            return Err(DomainError::Config("every split needs instances".into()));
        }
        if self.sinkhorn_eps <= 0.0 || self.sinkhorn_iters == 0 {
            return Err(DomainError::Config(
                "sinkhorn_eps must be positive and sinkhorn_iters nonzero".into(),
            ));
        }
        Ok(())
    }
}

/// The utility of one resource as a function of its scalar feature.
pub fn cubic_utility(x: f64) -> f64 {
    10.0 * x * x * x - 6.5 * x
}

/// Features drawn uniformly from [-1, 1]; most of that range trends downward
/// through the cubic, which is what makes plain regression pick the wrong
/// end of the curve.
pub fn gen_linear_dataset(config: &LinearConfig, seed: u64) -> Result<Dataset, DomainError> {
    config.validate()?;
    let total = config.n_train + config.n_val + config.n_test;
    let mut instances = Vec::with_capacity(total);
    for id in 0..total {
        let split = if id < config.n_train {
            Split::Train
        } else if id < config.n_train + config.n_val {
            Split::Val
        } else {
            Split::Test
        };
        let mut rng = stream(seed, "linear_instance", &[id as u64]);
        let xs: Vec<f64> = (0..config.n_items)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let y = xs.iter().map(|&x| cubic_utility(x)).collect();
        instances.push(Instance {
            id: id as u64,
            split,
            features: xs,
            n_items: config.n_items,
            feat_dim: 1,
            y,
        });
    }
    Ok(Dataset {
        config: DomainConfig::Linear(config.clone()),
        seed,
        instances,
        q: None,
    })
}

/// Indices of the `budget` largest entries, ranked by value with ties going
/// to the lowest index.
pub fn topk_indices(yhat: &[f64], budget: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..yhat.len()).collect();
    order.sort_by(|&a, &b| {
        yhat[b]
            .partial_cmp(&yhat[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut picked = order[..budget].to_vec();
    picked.sort_unstable();
    picked
}

/// Indicator vector of the exact top-`budget` selection.
pub fn topk_oracle(yhat: &[f64], budget: usize) -> Vec<f64> {
    let mut z = vec![0.0; yhat.len()];
    for i in topk_indices(yhat, budget) {
        z[i] = 1.0;
    }
    z
}

/// Entropy-regularized soft top-k selection, unrolled on the tape.
///
/// Runs Sinkhorn scaling for the transport problem that sends unit mass per
/// item into a "selected" bin of capacity `budget` and a "rest" bin holding
/// the remainder. The returned fractional selection is positive, sums to
/// `budget` exactly, and approaches the hard top-k as `eps` shrinks.
pub fn soft_topk(
    tape: &mut Tape,
    yhat: Var,
    budget: usize,
    eps: f64,
    iters: usize,
) -> Result<Var, DomainError> {
    let n = tape.value(yhat).numel();
    let concrete = tape.value(yhat).data().to_vec();
    if concrete.iter().any(|v| !v.is_finite()) {
        return Err(DomainError::NanInIterates);
    }
    if budget == n {
        return Ok(tape.constant(crate::autodiff::Tensor::full(&[n], 1.0)));
    }
    debug_assert!(budget > 0 && iters > 0);
    // Shifting the selected column's scores by their max keeps exp in range;
    // the transport plan is invariant to per-column shifts.
    let m = concrete.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let m_const = tape.scalar_const(m);
    let inv_eps = tape.scalar_const(1.0 / eps);
    let shifted = tape.sub(yhat, m_const)?;
    let scaled = tape.mul(shifted, inv_eps)?;
    let k = tape.exp(scaled)?;

    let neg_one = tape.scalar_const(-1.0);
    let log_b = tape.scalar_const((budget as f64).ln());
    let log_rest = tape.scalar_const(((n - budget) as f64).ln());
    let mut v_sel = tape.scalar_const(1.0);
    let mut v_rest = tape.scalar_const(1.0);
    let mut u = k;
    for _ in 0..iters {
        let kv = tape.mul(k, v_sel)?;
        let denom = tape.add(kv, v_rest)?;
        let ld = tape.log(denom)?;
        let nld = tape.mul(ld, neg_one)?;
        u = tape.exp(nld)?;
        let uk = tape.mul(u, k)?;
        let s_sel = tape.sum(uk)?;
        let ls = tape.log(s_sel)?;
        let d_sel = tape.sub(log_b, ls)?;
        v_sel = tape.exp(d_sel)?;
        let s_rest = tape.sum(u)?;
        let lr = tape.log(s_rest)?;
        let d_rest = tape.sub(log_rest, lr)?;
        v_rest = tape.exp(d_rest)?;
    }
    let uk = tape.mul(u, k)?;
    let z = tape.mul(uk, v_sel)?;
    Ok(z)
}

/// Top-B resource selection with an exact sort oracle and a soft relaxation.
pub struct TopK {
    n: usize,
    budget: usize,
    eps: f64,
    iters: usize,
    counters: OracleCounters,
}

impl TopK {
    pub fn new(config: &LinearConfig) -> Result<TopK, DomainError> {
        config.validate()?;
        Ok(TopK {
            n: config.n_items,
            budget: config.budget,
            eps: config.sinkhorn_eps,
            iters: config.sinkhorn_iters,
            counters: OracleCounters::default(),
        })
    }

    fn check_dim(&self, v: &[f64], what: &'static str) -> Result<(), DomainError> {
        if v.len() != self.n {
            return Err(DomainError::Dim {
                what,
                expected: self.n,
                got: v.len(),
            });
        }
        Ok(())
    }
}

impl DecisionProblem for TopK {
    fn dim_y(&self) -> usize {
        self.n
    }

    fn dim_z(&self) -> usize {
        self.n
    }

    fn solve_exact(&self, yhat: &[f64]) -> Result<Vec<f64>, DomainError> {
        self.check_dim(yhat, "topk predictions")?;
        if let Some(bad) = yhat.iter().copied().find(|v| !v.is_finite()) {
            return Err(DomainError::Range {
                what: "topk prediction",
                value: bad,
            });
        }
        self.counters.bump_exact();
        Ok(topk_oracle(yhat, self.budget))
    }

    fn objective(&self, z: &[f64], y: &[f64]) -> Result<f64, DomainError> {
        self.check_dim(z, "topk decision")?;
        self.check_dim(y, "topk labels")?;
        Ok(z.iter().zip(y).map(|(zi, yi)| zi * yi).sum())
    }

    fn solve_surrogate(&self, tape: &mut Tape, yhat: Var) -> Result<Var, DomainError> {
        self.check_dim(tape.value(yhat).data(), "topk predictions")?;
        self.counters.bump_surrogate();
        soft_topk(tape, yhat, self.budget, self.eps, self.iters)
    }

    fn objective_on_tape(&self, tape: &mut Tape, z: Var, y: &[f64]) -> Result<Var, DomainError> {
        self.check_dim(y, "topk labels")?;
        let yc = tape.constant(crate::autodiff::Tensor::vector(y.to_vec()));
        let zy = tape.mul(z, yc)?;
        Ok(tape.sum(zy)?)
    }

    fn counters(&self) -> &OracleCounters {
        &self.counters
    }
}
