//! Value estimation from gamma-models: single-pass Q values, model-based value
//! expansion (MVE) with a single-step kernel, and gamma-MVE, which mixes `H`
//! chained gamma-model steps with a terminal value function:
//!
//! ```text
//! V(s; gt) = 1/(1-gt) * sum_{n<=H} alpha_n E_{mu_n}[r] + w_H * E_{mu_H}[V]
//! w_H      = ((gt - gamma) / (1 - gamma))^H = 1 - sum_{n<=H} alpha_n
//! ```
//!
//! With an exact occupancy model and the exact value function at `gt` the
//! estimate is exact for every `H`; with `gamma = 0` it is ordinary MVE.

use rand::Rng;

use crate::error::{check_target_discount, Error, Result};
use crate::linalg::{dot, Matrix};
use crate::mdp::{sample_categorical, PolicyTable};
use crate::rollout::{rollout_weights, step_ratio, RolloutKernel, Start};
use crate::tables::VTable;
use crate::td::GammaModelTable;

/// A gamma-MVE estimate split into its model and terminal parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValueEstimate {
    pub value: f64,
    pub model_term: f64,
    pub terminal_term: f64,
    pub horizon: usize,
    pub gamma: f64,
    pub gamma_tilde: f64,
}

/// `Q(s, a) = E_{s_e ~ mu(.|s,a)}[r(s_e)] / (1 - gamma)`.
pub fn q_from_model(model: &GammaModelTable, reward: &[f64], s: usize, a: usize) -> f64 {
    dot(&model.prob_row(s, a), reward) / (1.0 - model.gamma())
}

/// `V(s) = sum_a pi(a|s) Q(s, a)` from a single pass of the model per action.
pub fn value_map(model: &GammaModelTable, policy: &PolicyTable, reward: &[f64]) -> Result<VTable> {
    if reward.len() != model.n_states() {
        return Err(Error::DimensionMismatch("reward length differs from model".into()));
    }
    if policy.n_states() != model.n_states() || policy.n_actions() != model.n_actions() {
        return Err(Error::DimensionMismatch("policy shape differs from model".into()));
    }
    let values = (0..model.n_states())
        .map(|s| {
            policy
                .row(s)
                .iter()
                .enumerate()
                .filter(|(_, &p)| p != 0.0)
                .map(|(a, &p)| p * q_from_model(model, reward, s, a))
                .sum()
        })
        .collect();
    Ok(VTable { values })
}

/// Standard MVE with a single-step state kernel `P` (the MDP's `P_pi`, or the
/// state-conditioned kernel of a `gamma = 0` model):
/// `sum_{n<=H} gt^(n-1) E[r(s_n)] + gt^H E[V(s_H)]`. `H = 0` returns `V(s)`.
pub fn mve_estimate(
    step_kernel: &Matrix,
    v: &VTable,
    reward: &[f64],
    s: usize,
    horizon: usize,
    gamma_tilde: f64,
) -> f64 {
    let mut dist = vec![0.0; step_kernel.rows()];
    dist[s] = 1.0;
    let mut total = 0.0;
    let mut discount = 1.0;
    for _ in 0..horizon {
        dist = step_kernel.left_mul(&dist);
        total += discount * dot(&dist, reward);
        discount *= gamma_tilde;
    }
    total + discount * dot(&dist, &v.values)
}

/// Gamma-MVE estimate of `V(s; gamma_tilde)`.
pub fn gamma_mve_estimate(
    model: &GammaModelTable,
    policy: &PolicyTable,
    v: &VTable,
    reward: &[f64],
    s: usize,
    horizon: usize,
    gamma_tilde: f64,
) -> Result<ValueEstimate> {
    let kernel = RolloutKernel::new(model, policy)?;
    gamma_mve_with_kernel(&kernel, v, reward, Start::State(s), horizon, gamma_tilde)
}

/// Gamma-MVE over a prepared rollout kernel. A `StateAction` start gives the
/// corresponding action-conditioned estimate.
pub fn gamma_mve_with_kernel(
    kernel: &RolloutKernel,
    v: &VTable,
    reward: &[f64],
    start: Start,
    horizon: usize,
    gamma_tilde: f64,
) -> Result<ValueEstimate> {
    let gamma = kernel.gamma();
    let weights = rollout_weights(gamma, gamma_tilde, horizon)?;
    let steps = kernel.step_distributions(start, horizon)?;
    let model_term = weights
        .alphas
        .iter()
        .zip(&steps)
        .map(|(alpha, mu)| alpha * dot(mu, reward))
        .sum::<f64>()
        / (1.0 - gamma_tilde);
    let terminal_term = weights.tail_mass * dot(steps.last().expect("H >= 1"), &v.values);
    Ok(ValueEstimate {
        value: model_term + terminal_term,
        model_term,
        terminal_term,
        horizon,
        gamma,
        gamma_tilde,
    })
}

/// Single-rollout gamma-MVE: the reward and terminal expectations are replaced
/// by the states of one sampled chain `s_1, ..., s_H` of model steps.
pub fn sampled_gamma_mve_estimate<R: Rng + ?Sized>(
    kernel: &RolloutKernel,
    v: &VTable,
    reward: &[f64],
    s: usize,
    horizon: usize,
    gamma_tilde: f64,
    rng: &mut R,
) -> Result<ValueEstimate> {
    let gamma = kernel.gamma();
    let weights = rollout_weights(gamma, gamma_tilde, horizon)?;
    if s >= kernel.kernel().rows() {
        return Err(Error::InvalidArgument(format!("state {s} out of range")));
    }
    let mut state = s;
    let mut model_term = 0.0;
    for alpha in &weights.alphas {
        state = sample_categorical(kernel.kernel().row(state), rng);
        model_term += alpha * reward[state];
    }
    model_term /= 1.0 - gamma_tilde;
    let terminal_term = weights.tail_mass * v.values[state];
    Ok(ValueEstimate {
        value: model_term + terminal_term,
        model_term,
        terminal_term,
        horizon,
        gamma,
        gamma_tilde,
    })
}

/// Weight on the terminal value, `((gt - gamma) / (1 - gamma))^H`.
pub fn terminal_weight(gamma: f64, gamma_tilde: f64, horizon: usize) -> Result<f64> {
    check_target_discount(gamma, gamma_tilde)?;
    let closed = step_ratio(gamma, gamma_tilde).powi(horizon as i32);
    debug_assert!({
        let w = rollout_weights(gamma, gamma_tilde, horizon.max(1))?;
        horizon == 0 || (1.0 - w.alphas.iter().sum::<f64>() - closed).abs() <= 1e-12
    });
    Ok(closed)
}

/// Single-step MVE rollout length whose terminal weight `gt^H'` matches the
/// gamma-MVE terminal weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EffectiveHorizon {
    Finite { exact: f64, rounded: usize },
    /// `gamma == gamma_tilde`: the terminal weight is zero.
    Infinite,
}

pub fn effective_horizon_match(
    gamma: f64,
    gamma_tilde: f64,
    horizon: usize,
) -> Result<EffectiveHorizon> {
    check_target_discount(gamma, gamma_tilde)?;
    if gamma_tilde <= 0.0 {
        return Err(Error::InvalidArgument(
            "effective horizon needs gamma_tilde > 0".into(),
        ));
    }
    if gamma == gamma_tilde {
        return Ok(EffectiveHorizon::Infinite);
    }
    let exact = horizon as f64 * step_ratio(gamma, gamma_tilde).ln() / gamma_tilde.ln();
    Ok(EffectiveHorizon::Finite {
        exact,
        rounded: exact.round() as usize,
    })
}
