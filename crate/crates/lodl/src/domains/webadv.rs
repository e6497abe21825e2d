use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{
    DomainConfig, DomainError, Dataset, DecisionProblem, Instance, OracleCounters, Split,
};
use crate::autodiff::{Tape, Tensor, Var};
use crate::rng::stream;

/// Pick `budget` of `n_websites` to advertise on; the payoff is the expected
/// fraction of users who click at least once, so CTRs combine multiplicatively.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WebAdvConfig {
    pub n_websites: usize,
    pub n_users: usize,
    pub budget: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    /// Overall click-through-rate scale; rates stay in `[0.25 * this, this]`.
    pub ctr_scale: f64,
    /// Projected-ascent steps of the differentiable relaxation.
    pub ascent_steps: usize,
    pub ascent_step_size: f64,
}

impl Default for WebAdvConfig {
    fn default() -> Self {
        WebAdvConfig {
            n_websites: 5,
            n_users: 10,
            budget: 2,
            n_train: 80,
            n_val: 20,
            n_test: 500,
            ctr_scale: 0.2,
            ascent_steps: 50,
            ascent_step_size: 0.5,
        }
    }
}

impl WebAdvConfig {
    fn validate(&self) -> Result<(), DomainError> {
        if self.n_websites == 0 || self.n_users == 0 {
            return Err(DomainError::Config("need websites and users".into()));
        }
        if self.n_websites > 20 {
            return Err(DomainError::EnumerationTooLarge(self.n_websites));
        }
        if self.budget == 0 || self.budget > self.n_websites {
            return Err(DomainError::Config(format!(
                "budget {} must be in 1..={} websites",
                self.budget, self.n_websites
            )));
        }
        if !(self.ctr_scale > 0.0 && self.ctr_scale <= 1.0) {
            return Err(DomainError::Config("ctr_scale must be in (0, 1]".into()));
        }
        if self.ascent_steps == 0 || self.ascent_step_size <= 0.0 {
            return Err(DomainError::Config("ascent schedule must be positive".into()));
        }
        Ok(())
    }
}

/// CTR matrices are rank-one noise-free products of website quality and user
/// propensity; features are a fixed random linear mix of each website's CTR
/// row, so the map back to rates has to be learned from data.
pub fn gen_webadv_dataset(config: &WebAdvConfig, seed: u64) -> Result<Dataset, DomainError> {
    config.validate()?;
    let (m, n) = (config.n_websites, config.n_users);
    let mut mix_rng = stream(seed, "webadv_mix", &[]);
    let scale = 1.0 / (n as f64).sqrt();
    let mix: Vec<f64> = (0..n * n)
        .map(|_| {
            let g: f64 = StandardNormal.sample(&mut mix_rng);
            g * scale
        })
        .collect();
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
        let mut rng = stream(seed, "webadv_instance", &[id as u64]);
        let quality: Vec<f64> = (0..m).map(|_| rng.gen_range(0.5..1.0)).collect();
        let propensity: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..1.0)).collect();
        let mut y = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                y[i * n + j] = quality[i] * propensity[j] * config.ctr_scale;
            }
        }
        let mut features = vec![0.0; m * n];
        for i in 0..m {
            for r in 0..n {
                let mut acc = 0.0;
                for c in 0..n {
                    acc += mix[r * n + c] * y[i * n + c];
                }
                features[i * n + r] = acc;
            }
        }
        instances.push(Instance {
            id: id as u64,
            split,
            features,
            n_items: m,
            feat_dim: n,
            y,
        });
    }
    Ok(Dataset {
        config: DomainConfig::WebAdv(config.clone()),
        seed,
        instances,
        q: None,
    })
}

/// Expected fraction of users clicking at least one selected ad:
/// `(1/N) sum_j (1 - prod_i (1 - z_i * y_ij))`. Fractional `z` evaluates the
/// multilinear extension of the set function.
pub fn webadv_objective(z: &[f64], y: &[f64], n_users: usize) -> Result<f64, DomainError> {
    let m = z.len();
    if n_users == 0 || y.len() != m * n_users {
        return Err(DomainError::Dim {
            what: "ctr matrix",
            expected: m * n_users,
            got: y.len(),
        });
    }
    for &zi in z {
        if !(0.0..=1.0).contains(&zi) {
            return Err(DomainError::Range {
                what: "decision entry",
                value: zi,
            });
        }
    }
    for &yij in y {
        if !(0.0..=1.0).contains(&yij) {
            return Err(DomainError::Range {
                what: "ctr entry",
                value: yij,
            });
        }
    }
    Ok(raw_click_objective(z, y, n_users))
}

/// The same multilinear formula without range validation; oracle internals
/// evaluate it at arbitrary predicted rates.
fn raw_click_objective(z: &[f64], y: &[f64], n_users: usize) -> f64 {
    let m = z.len();
    let mut total = 0.0;
    for j in 0..n_users {
        let mut miss = 1.0;
        for i in 0..m {
            miss *= 1.0 - z[i] * y[i * n_users + j];
        }
        total += 1.0 - miss;
    }
    total / n_users as f64
}

/// All size-`budget` subsets of `0..m`, lexicographically ordered.
pub fn enumerate_subsets(m: usize, budget: usize) -> Vec<Vec<usize>> {
    assert!(budget >= 1 && budget <= m);
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..budget).collect();
    loop {
        out.push(cur.clone());
        // rightmost position that can still advance
        let mut i = budget;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if cur[i] != i + m - budget {
                break;
            }
            if i == 0 {
                return out;
            }
        }
        cur[i] += 1;
        for j in i + 1..budget {
            cur[j] = cur[j - 1] + 1;
        }
    }
}

pub struct WebAdvProblem {
    m: usize,
    n_users: usize,
    budget: usize,
    steps: usize,
    step_size: f64,
    counters: OracleCounters,
}

impl WebAdvProblem {
    pub fn new(config: &WebAdvConfig) -> Result<WebAdvProblem, DomainError> {
        config.validate()?;
        Ok(WebAdvProblem {
            m: config.n_websites,
            n_users: config.n_users,
            budget: config.budget,
            steps: config.ascent_steps,
            step_size: config.ascent_step_size,
            counters: OracleCounters::default(),
        })
    }

    fn check_y(&self, len: usize, what: &'static str) -> Result<(), DomainError> {
        if len != self.m * self.n_users {
            return Err(DomainError::Dim {
                what,
                expected: self.m * self.n_users,
                got: len,
            });
        }
        Ok(())
    }

    /// Selection matrix `[m*n, n]` whose matmul pulls website `i`'s row out of
    /// the flat prediction vector; its transpose in the backward pass routes
    /// row gradients back into the right slots.
    fn row_selector(&self, tape: &mut Tape, i: usize) -> Var {
        let n = self.n_users;
        let mut s = vec![0.0; self.m * n * n];
        for j in 0..n {
            s[(i * n + j) * n + j] = 1.0;
        }
        tape.constant(Tensor::new(vec![self.m * n, n], s).expect("selector shape"))
    }

    /// Ascent direction of the multilinear extension at `z`:
    /// `g_i = (1/N) sum_j y_ij prod_{k != i} (1 - z_k y_kj)`, written out as
    /// tape ops so it stays differentiable in both `z` and the CTR rows.
    fn gradient_on_tape(
        &self,
        tape: &mut Tape,
        z: Var,
        rows: &[Var],
        onehots: &[Var],
    ) -> Result<Var, DomainError> {
        let one = tape.scalar_const(1.0);
        let mut factors = Vec::with_capacity(self.m);
        for i in 0..self.m {
            let zi_v = tape.mul(z, onehots[i])?;
            let zi = tape.sum(zi_v)?;
            let zy = tape.mul(rows[i], zi)?;
            factors.push(tape.sub(one, zy)?);
        }
        let mut grad: Option<Var> = None;
        for i in 0..self.m {
            let mut prod: Option<Var> = None;
            for (j, &f) in factors.iter().enumerate() {
                if j == i {
                    continue;
                }
                prod = Some(match prod {
                    None => f,
                    Some(p) => tape.mul(p, f)?,
                });
            }
            let weighted = match prod {
                None => rows[i],
                Some(p) => tape.mul(rows[i], p)?,
            };
            let gi = tape.mean(weighted)?;
            let contrib = tape.mul(onehots[i], gi)?;
            grad = Some(match grad {
                None => contrib,
                Some(g) => tape.add(g, contrib)?,
            });
        }
        Ok(grad.expect("at least one website"))
    }
}

impl DecisionProblem for WebAdvProblem {
    fn dim_y(&self) -> usize {
        self.m * self.n_users
    }

    fn dim_z(&self) -> usize {
        self.m
    }

    fn solve_exact(&self, yhat: &[f64]) -> Result<Vec<f64>, DomainError> {
        self.check_y(yhat.len(), "predicted ctr matrix")?;
        if let Some(bad) = yhat.iter().copied().find(|v| !v.is_finite()) {
            return Err(DomainError::Range {
                what: "predicted ctr entry",
                value: bad,
            });
        }
        self.counters.bump_exact();
        let mut best: Option<(f64, Vec<usize>)> = None;
        for subset in enumerate_subsets(self.m, self.budget) {
            let mut z = vec![0.0; self.m];
            for &i in &subset {
                z[i] = 1.0;
            }
            let score = raw_click_objective(&z, yhat, self.n_users);
            // strict improvement keeps the lexicographically first maximizer
            if best.as_ref().map_or(true, |(s, _)| score > *s) {
                best = Some((score, subset));
            }
        }
        let mut z = vec![0.0; self.m];
        for i in best.expect("non-empty enumeration").1 {
            z[i] = 1.0;
        }
        Ok(z)
    }

    fn objective(&self, z: &[f64], y: &[f64]) -> Result<f64, DomainError> {
        if z.len() != self.m {
            return Err(DomainError::Dim {
                what: "decision",
                expected: self.m,
                got: z.len(),
            });
        }
        webadv_objective(z, y, self.n_users)
    }

    /// Projected gradient ascent on the multilinear extension, fully unrolled
    /// on the tape. Each step clamps into the box and rescales onto the budget
    /// when the clamped point exceeds it; which branch applies is decided from
    /// concrete values, so gradients are exact within each piece.
    fn solve_surrogate(&self, tape: &mut Tape, yhat: Var) -> Result<Var, DomainError> {
        self.check_y(tape.value(yhat).numel(), "predicted ctr matrix")?;
        self.counters.bump_surrogate();
        let rows: Vec<Var> = (0..self.m)
            .map(|i| {
                let sel = self.row_selector(tape, i);
                tape.matmul(yhat, sel)
            })
            .collect::<Result<_, _>>()?;
        let onehots: Vec<Var> = (0..self.m).map(|i| onehot(tape, self.m, i)).collect();
        let budget = self.budget as f64;
        let step = tape.scalar_const(self.step_size);
        let mut z = tape.constant(Tensor::full(&[self.m], budget / self.m as f64));
        for _ in 0..self.steps {
            let g = self.gradient_on_tape(tape, z, &rows, &onehots)?;
            let scaled = tape.mul(g, step)?;
            let moved = tape.add(z, scaled)?;
            let boxed = super::clamp01_on_tape(tape, moved)?;
            let total: f64 = tape.value(boxed).data().iter().sum();
            z = if total > budget {
                // z * (budget / total), the division spelled exp(log b - log s)
                let s = tape.sum(boxed)?;
                let log_s = tape.log(s)?;
                let log_b = tape.scalar_const(budget.ln());
                let log_scale = tape.sub(log_b, log_s)?;
                let scale = tape.exp(log_scale)?;
                tape.mul(boxed, scale)?
            } else {
                boxed
            };
            if !tape.value(z).all_finite() {
                return Err(DomainError::NanInIterates);
            }
        }
        Ok(z)
    }

    fn objective_on_tape(&self, tape: &mut Tape, z: Var, y: &[f64]) -> Result<Var, DomainError> {
        self.check_y(y.len(), "ctr matrix")?;
        if tape.value(z).numel() != self.m {
            return Err(DomainError::Dim {
                what: "decision",
                expected: self.m,
                got: tape.value(z).numel(),
            });
        }
        let one = tape.scalar_const(1.0);
        let mut miss: Option<Var> = None;
        for i in 0..self.m {
            let row = tape.constant(Tensor::vector(
                y[i * self.n_users..(i + 1) * self.n_users].to_vec(),
            ));
            let oh = onehot(tape, self.m, i);
            let zi_v = tape.mul(z, oh)?;
            let zi = tape.sum(zi_v)?;
            let zy = tape.mul(row, zi)?;
            let factor = tape.sub(one, zy)?;
            miss = Some(match miss {
                None => factor,
                Some(p) => tape.mul(p, factor)?,
            });
        }
        let hit = tape.sub(one, miss.expect("non-empty product"))?;
        Ok(tape.mean(hit)?)
    }

    fn counters(&self) -> &OracleCounters {
        &self.counters
    }
}

fn onehot(tape: &mut Tape, n: usize, i: usize) -> Var {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    tape.constant(Tensor::vector(v))
}
