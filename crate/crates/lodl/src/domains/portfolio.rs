use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{
    capped_simplex_tau, lambda_max, lambda_min, project_capped_simplex, DomainConfig, DomainError,
    Dataset, DecisionProblem, Instance, OracleCounters, Split,
};
use crate::autodiff::{Tape, Tensor, Var};
use crate::rng::stream;

/// Allocate at most the full budget across assets, trading expected return
/// against correlation risk: maximize `z . y - risk_aversion * z' Q z` over
/// `{0 <= z <= 1, sum z <= 1}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PortfolioConfig {
    pub n_assets: usize,
    pub risk_aversion: f64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    /// Lookback length for the rolling features and the correlation estimate.
    pub window: usize,
    pub n_factors: usize,
    /// AR(1) coefficient of the latent factors; in `[0, 1)`.
    pub factor_persistence: f64,
    pub factor_vol: f64,
    pub idio_vol: f64,
    /// Target KKT residual of the exact solver.
    pub solver_tol: f64,
    /// Residual above which hitting the iteration cap is an error.
    pub solver_fail_tol: f64,
    pub solver_max_iter: usize,
    /// Fixed projected-gradient steps of the differentiable relaxation.
    pub surrogate_steps: usize,
}

impl Default for PortfolioConfig {
    fn default() -> Self {
        PortfolioConfig {
            n_assets: 50,
            risk_aversion: 0.1,
            n_train: 100,
            n_val: 50,
            n_test: 200,
            window: 20,
            n_factors: 5,
            factor_persistence: 0.9,
            factor_vol: 0.02,
            idio_vol: 0.01,
            solver_tol: 1e-8,
            solver_fail_tol: 1e-6,
            solver_max_iter: 10_000,
            surrogate_steps: 200,
        }
    }
}

impl PortfolioConfig {
    fn validate(&self) -> Result<(), DomainError> {
        if self.n_assets < 2 {
            return Err(DomainError::Config("need at least two assets".into()));
        }
        if self.n_train == 0 || self.n_val == 0 || self.n_test == 0 {
            return Err(DomainError::Config("every split needs instances".into()));
        }
        if self.window < 5 {
            return Err(DomainError::Config("window must be at least 5".into()));
        }
        if self.n_factors == 0 {
            return Err(DomainError::Config("need at least one factor".into()));
        }
        if !(0.0..1.0).contains(&self.factor_persistence) {
            return Err(DomainError::Config("factor_persistence must be in [0, 1)".into()));
        }
        if self.factor_vol <= 0.0 || self.idio_vol <= 0.0 {
            return Err(DomainError::Config("volatilities must be positive".into()));
        }
        if self.risk_aversion <= 0.0 {
            return Err(DomainError::Config("risk_aversion must be positive".into()));
        }
        if self.solver_tol <= 0.0 || self.solver_fail_tol < self.solver_tol {
            return Err(DomainError::Config(
                "need 0 < solver_tol <= solver_fail_tol".into(),
            ));
        }
        if self.solver_max_iter == 0 || self.surrogate_steps == 0 {
            return Err(DomainError::Config("iteration counts must be positive".into()));
        }
        Ok(())
    }
}

/// Number of per-asset features produced by the generator.
pub const PORTFOLIO_FEAT_DIM: usize = 5;

/// Simulates one return panel and slices it into overlapping instances.
///
/// Returns follow a latent AR(1) factor model, so the next period is genuinely
/// predictable from the recent past. One instance per period: features are
/// rolling statistics of the trailing window, the label is that period's
/// return vector. Splits are in temporal order and the correlation matrix `Q`
/// is estimated on the training periods only.
pub fn gen_portfolio_dataset(config: &PortfolioConfig, seed: u64) -> Result<Dataset, DomainError> {
    config.validate()?;
    let n = config.n_assets;
    let k = config.n_factors;
    let rho = config.factor_persistence;
    let n_periods = config.window + config.n_train + config.n_val + config.n_test;

    let mut load_rng = stream(seed, "portfolio_loadings", &[]);
    let load_scale = 1.0 / (k as f64).sqrt();
    let loadings: Vec<f64> = (0..n * k)
        .map(|_| {
            let g: f64 = StandardNormal.sample(&mut load_rng);
            g * load_scale
        })
        .collect();

    // stationary start so early periods are not atypically quiet
    let mut factors: Vec<f64> = {
        let mut rng = stream(seed, "portfolio_period", &[u64::MAX]);
        let stat = config.factor_vol / (1.0 - rho * rho).sqrt();
        (0..k)
            .map(|_| {
                let g: f64 = StandardNormal.sample(&mut rng);
                g * stat
            })
            .collect()
    };

    let mut returns = vec![0.0; n_periods * n];
    for t in 0..n_periods {
        let mut rng = stream(seed, "portfolio_period", &[t as u64]);
        for f in factors.iter_mut() {
            let g: f64 = StandardNormal.sample(&mut rng);
            *f = rho * *f + config.factor_vol * g;
        }
        for i in 0..n {
            let mut common = 0.0;
            for j in 0..k {
                common += loadings[i * k + j] * factors[j];
            }
            let g: f64 = StandardNormal.sample(&mut rng);
            returns[t * n + i] = (common + config.idio_vol * g).clamp(-0.5, 0.5);
        }
    }

    // trading-volume proxy: exponential moving average of absolute returns
    let mut volume = vec![0.0; n_periods * n];
    for i in 0..n {
        volume[i] = returns[i].abs();
    }
    for t in 1..n_periods {
        for i in 0..n {
            volume[t * n + i] = 0.8 * volume[(t - 1) * n + i] + 0.2 * returns[t * n + i].abs();
        }
    }

    let w = config.window;
    let total = config.n_train + config.n_val + config.n_test;
    let mut instances = Vec::with_capacity(total);
    for id in 0..total {
        let t = w + id;
        let split = if id < config.n_train {
            Split::Train
        } else if id < config.n_train + config.n_val {
            Split::Val
        } else {
            Split::Test
        };
        let mut features = vec![0.0; n * PORTFOLIO_FEAT_DIM];
        for i in 0..n {
            let hist: Vec<f64> = (t - w..t).map(|s| returns[s * n + i]).collect();
            let last = hist[w - 1];
            let mean5 = hist[w - 5..].iter().sum::<f64>() / 5.0;
            let mean_w = hist.iter().sum::<f64>() / w as f64;
            let var_w = hist.iter().map(|r| (r - mean_w) * (r - mean_w)).sum::<f64>() / w as f64;
            let f = &mut features[i * PORTFOLIO_FEAT_DIM..(i + 1) * PORTFOLIO_FEAT_DIM];
            f[0] = last;
            f[1] = mean5;
            f[2] = mean_w;
            f[3] = var_w.sqrt();
            f[4] = volume[(t - 1) * n + i];
        }
        instances.push(Instance {
            id: id as u64,
            split,
            features,
            n_items: n,
            feat_dim: PORTFOLIO_FEAT_DIM,
            y: returns[t * n..(t + 1) * n].to_vec(),
        });
    }

    let q = train_correlation(&returns, n, w, w + config.n_train);
    Ok(Dataset {
        config: DomainConfig::Portfolio(config.clone()),
        seed,
        instances,
        q: Some(q),
    })
}

/// Empirical correlation of the rows `returns[from..to]`, symmetrized and
/// floored to be positive semidefinite.
fn train_correlation(returns: &[f64], n: usize, from: usize, to: usize) -> Vec<f64> {
    let len = (to - from) as f64;
    let mut mean = vec![0.0; n];
    for t in from..to {
        for i in 0..n {
            mean[i] += returns[t * n + i];
        }
    }
    for m in mean.iter_mut() {
        *m /= len;
    }
    let mut cov = vec![0.0; n * n];
    for t in from..to {
        for i in 0..n {
            let di = returns[t * n + i] - mean[i];
            for j in 0..n {
                let dj = returns[t * n + j] - mean[j];
                cov[i * n + j] += di * dj / len;
            }
        }
    }
    let sd: Vec<f64> = (0..n).map(|i| cov[i * n + i].sqrt().max(1e-12)).collect();
    let mut q = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            q[i * n + j] = cov[i * n + j] / (sd[i] * sd[j]);
        }
    }
    for i in 0..n {
        for j in 0..i {
            let s = 0.5 * (q[i * n + j] + q[j * n + i]);
            q[i * n + j] = s;
            q[j * n + i] = s;
        }
    }
    let lo = lambda_min(&q, n, 200);
    if lo < 1e-8 {
        let bump = 1e-8 - lo;
        for i in 0..n {
            q[i * n + i] += bump;
        }
    }
    q
}

pub struct PortfolioProblem {
    n: usize,
    risk_aversion: f64,
    q: Vec<f64>,
    /// `1 / (2 * risk_aversion * lambda_max(Q) + 1)`, a safe gradient step.
    step: f64,
    tol: f64,
    fail_tol: f64,
    max_iter: usize,
    surrogate_steps: usize,
    counters: OracleCounters,
}

impl PortfolioProblem {
    pub fn new(config: &PortfolioConfig, q: Vec<f64>) -> Result<PortfolioProblem, DomainError> {
        config.validate()?;
        let n = config.n_assets;
        if q.len() != n * n {
            return Err(DomainError::Dim {
                what: "correlation matrix",
                expected: n * n,
                got: q.len(),
            });
        }
        for (idx, &v) in q.iter().enumerate() {
            if !v.is_finite() {
                return Err(DomainError::Range {
                    what: "correlation entry",
                    value: v,
                });
            }
            let (r, c) = (idx / n, idx % n);
            if (v - q[c * n + r]).abs() > 1e-9 {
                return Err(DomainError::Config("correlation matrix is not symmetric".into()));
            }
        }
        let lip = 2.0 * config.risk_aversion * lambda_max(&q, n, 200).max(0.0);
        Ok(PortfolioProblem {
            n,
            risk_aversion: config.risk_aversion,
            q,
            step: 1.0 / (lip + 1.0),
            tol: config.solver_tol,
            fail_tol: config.solver_fail_tol,
            max_iter: config.solver_max_iter,
            surrogate_steps: config.surrogate_steps,
            counters: OracleCounters::default(),
        })
    }

    /// `2 * risk_aversion * Q z - yhat`, the gradient of the negated objective.
    fn neg_grad(&self, z: &[f64], yhat: &[f64], out: &mut [f64]) {
        let n = self.n;
        for r in 0..n {
            let mut acc = 0.0;
            for c in 0..n {
                acc += self.q[r * n + c] * z[c];
            }
            out[r] = 2.0 * self.risk_aversion * acc - yhat[r];
        }
    }

    /// Accelerated projected gradient with a gradient-based momentum restart.
    /// Stops at KKT residual `max_i |z_i - P(z - step * grad)_i| <= tol`.
    fn apg(&self, yhat: &[f64], start: Option<&[f64]>) -> Result<Vec<f64>, DomainError> {
        if let Some(bad) = yhat.iter().copied().find(|v| !v.is_finite()) {
            return Err(DomainError::Range {
                what: "predicted returns",
                value: bad,
            });
        }
        let n = self.n;
        let mut z = match start {
            // a malformed warm start is ignored, not an error
            Some(s) if s.len() == n && s.iter().all(|v| v.is_finite()) => {
                project_capped_simplex(s, 1.0)
            }
            _ => vec![0.0; n],
        };
        let mut momentum = z.clone();
        let mut t = 1.0_f64;
        let mut grad = vec![0.0; n];
        let mut residual = f64::INFINITY;
        for _ in 0..self.max_iter {
            // the residual check doubles as the proximal step from z itself
            self.neg_grad(&z, yhat, &mut grad);
            let shifted: Vec<f64> = (0..n).map(|i| z[i] - self.step * grad[i]).collect();
            let prox = project_capped_simplex(&shifted, 1.0);
            residual = prox
                .iter()
                .zip(&z)
                .map(|(p, zi)| (p - zi).abs())
                .fold(0.0, f64::max);
            if residual <= self.tol {
                return Ok(z);
            }
            self.neg_grad(&momentum, yhat, &mut grad);
            let shifted: Vec<f64> = (0..n).map(|i| momentum[i] - self.step * grad[i]).collect();
            let next = project_capped_simplex(&shifted, 1.0);
            if next.iter().any(|v| !v.is_finite()) {
                return Err(DomainError::NanInIterates);
            }
            // restart when the gradient opposes the travel direction
            let along: f64 = grad.iter().zip(next.iter().zip(&z)).map(|(g, (nx, zi))| g * (nx - zi)).sum();
            if along > 0.0 {
                t = 1.0;
                momentum.copy_from_slice(&next);
            } else {
                let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
                let beta = (t - 1.0) / t_next;
                for i in 0..n {
                    momentum[i] = next[i] + beta * (next[i] - z[i]);
                }
                t = t_next;
            }
            z = next;
        }
        if residual <= self.fail_tol {
            Ok(z)
        } else {
            Err(DomainError::SolverStalled {
                residual,
                tol: self.tol,
            })
        }
    }

    fn check_dim(&self, len: usize, what: &'static str) -> Result<(), DomainError> {
        if len != self.n {
            return Err(DomainError::Dim {
                what,
                expected: self.n,
                got: len,
            });
        }
        Ok(())
    }

    /// One projection onto `{0 <= z <= 1, sum z <= 1}` in tape ops. The active
    /// piece (which coordinates clamp, whether the budget binds) is read off
    /// the concrete values; within that piece the shift is the exact linear
    /// formula, so gradients through the projection are exact.
    fn project_on_tape(&self, tape: &mut Tape, moved: Var) -> Result<Var, DomainError> {
        let vals = tape.value(moved).data().to_vec();
        match capped_simplex_tau(&vals, 1.0) {
            None => Ok(super::clamp01_on_tape(tape, moved)?),
            Some(tau) => {
                let mut mask = vec![0.0; self.n];
                let mut n_active = 0usize;
                let mut n_high = 0usize;
                for (i, &v) in vals.iter().enumerate() {
                    let s = v - tau;
                    if s >= 1.0 {
                        n_high += 1;
                    } else if s > 0.0 {
                        mask[i] = 1.0;
                        n_active += 1;
                    }
                }
                let shifted = if n_active == 0 {
                    // degenerate flat piece: the shift does not vary with v
                    let tau_c = tape.scalar_const(tau);
                    tape.sub(moved, tau_c)?
                } else {
                    let mask_c = tape.constant(Tensor::vector(mask));
                    let picked = tape.mul(moved, mask_c)?;
                    let sum_active = tape.sum(picked)?;
                    let offset = tape.scalar_const(n_high as f64 - 1.0);
                    let numer = tape.add(sum_active, offset)?;
                    let inv = tape.scalar_const(1.0 / n_active as f64);
                    let tau_v = tape.mul(numer, inv)?;
                    tape.sub(moved, tau_v)?
                };
                Ok(super::clamp01_on_tape(tape, shifted)?)
            }
        }
    }
}

impl DecisionProblem for PortfolioProblem {
    fn dim_y(&self) -> usize {
        self.n
    }

    fn dim_z(&self) -> usize {
        self.n
    }

    fn solve_exact(&self, yhat: &[f64]) -> Result<Vec<f64>, DomainError> {
        self.check_dim(yhat.len(), "predicted returns")?;
        self.counters.bump_exact();
        self.apg(yhat, None)
    }

    fn solve_exact_warm(
        &self,
        yhat: &[f64],
        hint: Option<&[f64]>,
    ) -> Result<Vec<f64>, DomainError> {
        self.check_dim(yhat.len(), "predicted returns")?;
        self.counters.bump_exact();
        self.apg(yhat, hint)
    }

    fn objective(&self, z: &[f64], y: &[f64]) -> Result<f64, DomainError> {
        self.check_dim(z.len(), "decision")?;
        self.check_dim(y.len(), "returns")?;
        let n = self.n;
        let ret: f64 = z.iter().zip(y).map(|(zi, yi)| zi * yi).sum();
        let mut quad = 0.0;
        for r in 0..n {
            let mut acc = 0.0;
            for c in 0..n {
                acc += self.q[r * n + c] * z[c];
            }
            quad += z[r] * acc;
        }
        Ok(ret - self.risk_aversion * quad)
    }

    /// The exact solver's iteration unrolled for a fixed number of plain
    /// projected-gradient steps, recorded on the tape.
    fn solve_surrogate(&self, tape: &mut Tape, yhat: Var) -> Result<Var, DomainError> {
        self.check_dim(tape.value(yhat).numel(), "predicted returns")?;
        self.counters.bump_surrogate();
        let n = self.n;
        let q_c = tape.constant(Tensor::new(vec![n, n], self.q.clone()).expect("square q"));
        let two_lam = tape.scalar_const(2.0 * self.risk_aversion);
        let step = tape.scalar_const(self.step);
        let mut z = tape.constant(Tensor::full(&[n], 0.5 / n as f64));
        for _ in 0..self.surrogate_steps {
            let qz = tape.matmul(q_c, z)?;
            let risk = tape.mul(qz, two_lam)?;
            let grad = tape.sub(risk, yhat)?;
            let scaled = tape.mul(grad, step)?;
            let moved = tape.sub(z, scaled)?;
            z = self.project_on_tape(tape, moved)?;
            if !tape.value(z).all_finite() {
                return Err(DomainError::NanInIterates);
            }
        }
        Ok(z)
    }

    fn objective_on_tape(&self, tape: &mut Tape, z: Var, y: &[f64]) -> Result<Var, DomainError> {
        self.check_dim(tape.value(z).numel(), "decision")?;
        self.check_dim(y.len(), "returns")?;
        let n = self.n;
        let q_c = tape.constant(Tensor::new(vec![n, n], self.q.clone()).expect("square q"));
        let y_c = tape.constant(Tensor::vector(y.to_vec()));
        let ret_v = tape.mul(z, y_c)?;
        let ret = tape.sum(ret_v)?;
        let qz = tape.matmul(q_c, z)?;
        let zqz_v = tape.mul(z, qz)?;
        let zqz = tape.sum(zqz_v)?;
        let lam = tape.scalar_const(self.risk_aversion);
        let risk = tape.mul(zqz, lam)?;
        Ok(tape.sub(ret, risk)?)
    }

    fn counters(&self) -> &OracleCounters {
        &self.counters
    }
}
