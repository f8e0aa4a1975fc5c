//! Chained gamma-model rollouts and their reweighting to a larger discount.
//!
//! Chaining `n` steps of a gamma-model lands on a timestep distributed as a
//! negative binomial `NB(n, 1 - gamma)`. Mixing the step distributions with
//! weights
//!
//! ```text
//! alpha_n = (1 - gt) (gt - gamma)^(n-1) / (1 - gamma)^n
//! ```
//!
//! recovers the geometric timestep distribution of the larger discount `gt`,
//! and the weight left after `H` steps is `((gt - gamma) / (1 - gamma))^H`.

use rand::Rng;

use crate::error::{check_target_discount, Error, Result};
use crate::linalg::{axpy, Matrix};
use crate::mdp::{sample_categorical, PolicyTable};
use crate::tables::ExitTable;
use crate::td::{state_conditioned_probs, GammaModelTable};

/// Mixture weights `alpha_1..alpha_H` over rollout steps, plus the unassigned tail.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutWeights {
    pub gamma: f64,
    pub gamma_tilde: f64,
    pub horizon: usize,
    pub alphas: Vec<f64>,
    /// `((gamma_tilde - gamma) / (1 - gamma))^H`.
    pub tail_mass: f64,
}

/// Per-step decay `(gamma_tilde - gamma) / (1 - gamma)` of the weights.
pub fn step_ratio(gamma: f64, gamma_tilde: f64) -> f64 {
    (gamma_tilde - gamma) / (1.0 - gamma)
}

pub fn rollout_weights(gamma: f64, gamma_tilde: f64, horizon: usize) -> Result<RolloutWeights> {
    check_target_discount(gamma, gamma_tilde)?;
    if horizon == 0 {
        return Err(Error::InvalidArgument("rollout horizon must be at least 1".into()));
    }
    let alphas = (1..=horizon)
        .map(|n| alpha(gamma, gamma_tilde, n))
        .collect();
    Ok(RolloutWeights {
        gamma,
        gamma_tilde,
        horizon,
        alphas,
        tail_mass: step_ratio(gamma, gamma_tilde).powi(horizon as i32),
    })
}

/// Closed-form `alpha_n`; `0^0 = 1` so `gamma = gamma_tilde` puts all weight on step 1.
pub fn alpha(gamma: f64, gamma_tilde: f64, n: usize) -> f64 {
    (1.0 - gamma_tilde) * (gamma_tilde - gamma).powi(n as i32 - 1) / (1.0 - gamma).powi(n as i32)
}

/// `P(T = t)` where `T` is the sum of `n` independent `Geom(1 - gamma)` exit
/// times on `{1, 2, ...}`: `C(t-1, t-n) gamma^(t-n) (1-gamma)^n` for `t >= n`.
pub fn negative_binomial_pmf(n: usize, gamma: f64, t: usize) -> f64 {
    if n == 0 || t < n {
        return 0.0;
    }
    let k = t - n;
    if gamma == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    // C(t-1, k) = prod_{i=1}^{n-1} (k + i) / i, accumulated in log space.
    let log_binom: f64 = (1..n).map(|i| ((k + i) as f64 / i as f64).ln()).sum();
    (log_binom + k as f64 * gamma.ln() + n as f64 * (1.0 - gamma).ln()).exp()
}

/// `q(t) = sum_{n <= H} alpha_n p_n(t)` for `t = 1..=t_max` (index `t - 1`).
pub fn timestep_mixture(
    gamma: f64,
    gamma_tilde: f64,
    horizon: usize,
    t_max: usize,
) -> Result<Vec<f64>> {
    let weights = rollout_weights(gamma, gamma_tilde, horizon)?;
    Ok((1..=t_max)
        .map(|t| {
            weights
                .alphas
                .iter()
                .enumerate()
                .take(t)
                .map(|(i, &a)| a * negative_binomial_pmf(i + 1, gamma, t))
                .sum()
        })
        .collect())
}

/// Smallest `H` whose weights cover at least `coverage` of the mass, i.e.
/// `((gt - gamma) / (1 - gamma))^H <= 1 - coverage`.
pub fn steps_to_mass(gamma: f64, gamma_tilde: f64, coverage: f64) -> Result<usize> {
    check_target_discount(gamma, gamma_tilde)?;
    if !(coverage > 0.0 && coverage < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "coverage must lie in (0, 1), got {coverage}"
        )));
    }
    let ratio = step_ratio(gamma, gamma_tilde);
    if ratio == 0.0 {
        return Ok(1);
    }
    let slack = 1.0 - coverage;
    let covers = |h: usize| ratio.powi(h as i32) <= slack;
    let mut h = ((slack.ln() / ratio.ln()).ceil() as usize).max(1);
    while !covers(h) {
        h += 1;
    }
    while h > 1 && covers(h - 1) {
        h -= 1;
    }
    Ok(h)
}

/// Where a rollout begins.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Start {
    /// First step is the policy-averaged row of the state.
    State(usize),
    /// First step is the row of this action; later steps follow the policy.
    StateAction(usize, usize),
}

/// A model and policy prepared for repeated rollout queries.
#[derive(Debug, Clone)]
pub struct RolloutKernel {
    probs: ExitTable,
    kernel: Matrix,
    gamma: f64,
}

impl RolloutKernel {
    pub fn new(model: &GammaModelTable, policy: &PolicyTable) -> Result<Self> {
        if policy.n_states() != model.n_states() || policy.n_actions() != model.n_actions() {
            return Err(Error::DimensionMismatch("policy shape differs from model".into()));
        }
        let probs = model.probs();
        let kernel = state_conditioned_probs(&probs, policy);
        Ok(Self {
            probs,
            kernel,
            gamma: model.gamma(),
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// State-conditioned one-step kernel `U`.
    pub fn kernel(&self) -> &Matrix {
        &self.kernel
    }

    fn first(&self, start: Start) -> Result<Vec<f64>> {
        let n = self.probs.n_states();
        match start {
            Start::State(s) if s < n => Ok(self.kernel.row(s).to_vec()),
            Start::StateAction(s, a) if s < n && a < self.probs.n_actions() => {
                Ok(self.probs.row(s, a).to_vec())
            }
            other => Err(Error::InvalidArgument(format!("start {other:?} out of range"))),
        }
    }

    /// `mu_1, ..., mu_H` with `mu_n = mu_{n-1} U`.
    pub fn step_distributions(&self, start: Start, horizon: usize) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(horizon);
        if horizon == 0 {
            return Ok(out);
        }
        out.push(self.first(start)?);
        for _ in 1..horizon {
            let next = self.kernel.left_mul(out.last().expect("nonempty"));
            out.push(next);
        }
        Ok(out)
    }
}

/// Distribution over states at the `n`-th chained model step.
pub fn n_step_distribution(
    model: &GammaModelTable,
    policy: &PolicyTable,
    start: Start,
    n: usize,
) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::InvalidArgument("step count must be at least 1".into()));
    }
    let kernel = RolloutKernel::new(model, policy)?;
    Ok(kernel.step_distributions(start, n)?.pop().expect("n >= 1"))
}

/// `sum_{n<=H} alpha_n mu_n` and the unassigned tail mass (not renormalized).
pub fn reweighted_distribution(
    model: &GammaModelTable,
    policy: &PolicyTable,
    start: Start,
    gamma_tilde: f64,
    horizon: usize,
) -> Result<(Vec<f64>, f64)> {
    let weights = rollout_weights(model.gamma(), gamma_tilde, horizon)?;
    let kernel = RolloutKernel::new(model, policy)?;
    let steps = kernel.step_distributions(start, horizon)?;
    let mut out = vec![0.0; model.n_states()];
    for (alpha, mu) in weights.alphas.iter().zip(&steps) {
        axpy(*alpha, mu, &mut out);
    }
    Ok((out, weights.tail_mass))
}

/// Samples `H` chained model steps from `start`.
pub fn sample_rollout<R: Rng + ?Sized>(
    model: &GammaModelTable,
    policy: &PolicyTable,
    start: usize,
    horizon: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if start >= model.n_states() {
        return Err(Error::InvalidArgument(format!("start state {start} out of range")));
    }
    let mut out = Vec::with_capacity(horizon);
    let mut s = start;
    for _ in 0..horizon {
        let a = policy.sample(s, rng);
        s = sample_categorical(&model.prob_row(s, a), rng);
        out.push(s);
    }
    Ok(out)
}
