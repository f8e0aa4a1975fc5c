//! Finite MDPs with state rewards, stochastic policies and the kernels they induce.

use std::fmt;

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Row-sum tolerance for every stochastic matrix in the crate.
pub const STOCHASTIC_TOL: f64 = 1e-12;

/// Finite MDP `(S, A, p, r)` with rewards attached to states.
///
/// `transition` is stored flat, indexed `[state][action][next_state]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    transition: Vec<f64>,
    reward: Vec<f64>,
}

/// A broken [`TabularMdp`] invariant.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Shape { expected: usize, found: usize, what: &'static str },
    NegativeEntry { s: usize, a: usize, next: usize, value: f64 },
    RowSum { s: usize, a: usize, sum: f64 },
    NonFiniteReward { s: usize, value: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Shape { expected, found, what } => {
                write!(f, "{what} has {found} entries, expected {expected}")
            }
            Violation::NegativeEntry { s, a, next, value } => {
                write!(f, "negative entry {value} at (s={s},a={a},s'={next})")
            }
            Violation::RowSum { s, a, sum } => {
                write!(f, "row sum {sum} at (s={s},a={a}), residual {}", sum - 1.0)
            }
            Violation::NonFiniteReward { s, value } => {
                write!(f, "non-finite reward {value} at s={s}")
            }
        }
    }
}

impl TabularMdp {
    /// Builds and validates an MDP.
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
    ) -> Result<Self> {
        let mdp = Self::new_unchecked(n_states, n_actions, transition, reward);
        let violations = validate_mdp(&mdp);
        if violations.is_empty() {
            Ok(mdp)
        } else {
            Err(Error::InvalidMdp(violations))
        }
    }

    /// Builds an MDP without checking invariants; pair with [`validate_mdp`].
    pub fn new_unchecked(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
    ) -> Self {
        Self {
            n_states,
            n_actions,
            transition,
            reward,
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn reward(&self) -> &[f64] {
        &self.reward
    }

    /// `p(. | s, a)`.
    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    pub fn transitions(&self) -> &[f64] {
        &self.transition
    }

    /// Same dynamics with a different reward vector.
    pub fn with_reward(&self, reward: Vec<f64>) -> Result<Self> {
        Self::new(self.n_states, self.n_actions, self.transition.clone(), reward)
    }

    /// Samples `s' ~ p(. | s, a)`.
    pub fn sample_next<R: Rng + ?Sized>(&self, s: usize, a: usize, rng: &mut R) -> usize {
        sample_categorical(self.transition_row(s, a), rng)
    }

    /// Deterministic 2-state chain whose single action swaps the state.
    pub fn swap_chain() -> Self {
        Self::new(2, 1, vec![0.0, 1.0, 1.0, 0.0], vec![0.0, 1.0])
            .expect("swap chain is valid")
    }

    /// Random MDP: transition rows are normalized uniform draws, rewards uniform in [-1, 1].
    pub fn random<R: Rng + ?Sized>(n_states: usize, n_actions: usize, rng: &mut R) -> Self {
        let mut transition = Vec::with_capacity(n_states * n_actions * n_states);
        for _ in 0..n_states * n_actions {
            transition.extend(random_simplex(n_states, rng));
        }
        let reward = (0..n_states).map(|_| rng.random_range(-1.0..1.0)).collect();
        Self::new(n_states, n_actions, transition, reward).expect("random rows are normalized")
    }

    /// Random MDP with deterministic transitions: each `(s, a)` moves to a uniformly drawn state.
    pub fn random_deterministic<R: Rng + ?Sized>(
        n_states: usize,
        n_actions: usize,
        rng: &mut R,
    ) -> Self {
        let mut transition = vec![0.0; n_states * n_actions * n_states];
        for sa in 0..n_states * n_actions {
            let next = rng.random_range(0..n_states);
            transition[sa * n_states + next] = 1.0;
        }
        let reward = (0..n_states).map(|_| rng.random_range(-1.0..1.0)).collect();
        Self::new(n_states, n_actions, transition, reward).expect("one-hot rows are valid")
    }
}

/// Lists every violated [`TabularMdp`] invariant; empty iff the MDP is valid.
pub fn validate_mdp(mdp: &TabularMdp) -> Vec<Violation> {
    let mut out = Vec::new();
    let expected = mdp.n_states * mdp.n_actions * mdp.n_states;
    if mdp.transition.len() != expected {
        out.push(Violation::Shape {
            expected,
            found: mdp.transition.len(),
            what: "transition",
        });
    }
    if mdp.reward.len() != mdp.n_states {
        out.push(Violation::Shape {
            expected: mdp.n_states,
            found: mdp.reward.len(),
            what: "reward",
        });
    }
    if !out.is_empty() {
        return out;
    }
    for s in 0..mdp.n_states {
        for a in 0..mdp.n_actions {
            let row = mdp.transition_row(s, a);
            for (next, &value) in row.iter().enumerate() {
                if value < 0.0 || !value.is_finite() {
                    out.push(Violation::NegativeEntry { s, a, next, value });
                }
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > STOCHASTIC_TOL {
                out.push(Violation::RowSum { s, a, sum });
            }
        }
    }
    for (s, &value) in mdp.reward.iter().enumerate() {
        if !value.is_finite() {
            out.push(Violation::NonFiniteReward { s, value });
        }
    }
    out
}

/// Stochastic policy `pi(a | s)`, rows indexed by state.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTable {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

impl PolicyTable {
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != n_states * n_actions {
            return Err(Error::DimensionMismatch(format!(
                "policy has {} entries, expected {}",
                probs.len(),
                n_states * n_actions
            )));
        }
        for (s, row) in probs.chunks(n_actions.max(1)).enumerate() {
            if row.iter().any(|&p| p < 0.0 || !p.is_finite()) {
                return Err(Error::InvalidArgument(format!("negative policy entry at s={s}")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::InvalidArgument(format!(
                    "policy row sum {sum} at s={s}"
                )));
            }
        }
        Ok(Self {
            n_states,
            n_actions,
            probs,
        })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        let p = 1.0 / n_actions as f64;
        Self {
            n_states,
            n_actions,
            probs: vec![p; n_states * n_actions],
        }
    }

    /// Deterministic policy taking `actions[s]` in state `s`.
    pub fn deterministic(n_actions: usize, actions: &[usize]) -> Result<Self> {
        let mut probs = vec![0.0; actions.len() * n_actions];
        for (s, &a) in actions.iter().enumerate() {
            if a >= n_actions {
                return Err(Error::InvalidArgument(format!(
                    "action {a} out of range at s={s}"
                )));
            }
            probs[s * n_actions + a] = 1.0;
        }
        Ok(Self {
            n_states: actions.len(),
            n_actions,
            probs,
        })
    }

    pub fn random<R: Rng + ?Sized>(n_states: usize, n_actions: usize, rng: &mut R) -> Self {
        let probs = (0..n_states)
            .flat_map(|_| random_simplex(n_actions, rng))
            .collect();
        Self {
            n_states,
            n_actions,
            probs,
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn sample<R: Rng + ?Sized>(&self, s: usize, rng: &mut R) -> usize {
        sample_categorical(self.row(s), rng)
    }

    /// Replaces the action distribution of state `s`.
    pub fn set_row(&mut self, s: usize, probs: &[f64]) -> Result<()> {
        if s >= self.n_states || probs.len() != self.n_actions {
            return Err(Error::DimensionMismatch(format!(
                "row {s} of length {} for a {}x{} policy",
                probs.len(),
                self.n_states,
                self.n_actions
            )));
        }
        let sum: f64 = probs.iter().sum();
        if probs.iter().any(|&p| p < 0.0 || !p.is_finite()) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("invalid policy row at s={s}")));
        }
        self.probs[s * self.n_actions..(s + 1) * self.n_actions].copy_from_slice(probs);
        Ok(())
    }

    /// Most probable action, lowest index on ties.
    pub fn greedy_action(&self, s: usize) -> usize {
        argmax(self.row(s))
    }
}

/// `P_pi[s][s'] = sum_a pi(a|s) p(s'|s,a)`.
pub fn policy_transition_matrix(mdp: &TabularMdp, policy: &PolicyTable) -> Result<Matrix> {
    check_policy_shape(mdp, policy)?;
    let n = mdp.n_states;
    let mut out = Matrix::zeros(n, n);
    for s in 0..n {
        let dst = out.row_mut(s);
        for (a, &pa) in policy.row(s).iter().enumerate() {
            if pa != 0.0 {
                crate::linalg::axpy(pa, mdp.transition_row(s, a), dst);
            }
        }
    }
    debug_assert!((0..n).all(|s| (out.row(s).iter().sum::<f64>() - 1.0).abs() <= 1e-12));
    Ok(out)
}

pub(crate) fn check_policy_shape(mdp: &TabularMdp, policy: &PolicyTable) -> Result<()> {
    if mdp.n_states != policy.n_states || mdp.n_actions != policy.n_actions {
        return Err(Error::DimensionMismatch(format!(
            "MDP is {}x{} but policy is {}x{}",
            mdp.n_states, mdp.n_actions, policy.n_states, policy.n_actions
        )));
    }
    Ok(())
}

/// Index of the largest entry; the lowest index wins exact ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Draws an index from a probability vector by inverse CDF.
pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last_positive = i;
            if u < acc {
                return i;
            }
        }
    }
    last_positive
}

fn random_simplex<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let mut row: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 1e-3).collect();
    let sum: f64 = row.iter().sum();
    row.iter_mut().for_each(|p| *p /= sum);
    row
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn swap_chain_is_valid() {
        assert!(validate_mdp(&TabularMdp::swap_chain()).is_empty());
    }

    #[test]
    fn short_row_is_reported() {
        let mdp = TabularMdp::new_unchecked(2, 1, vec![0.5, 0.4, 0.0, 1.0], vec![0.0, 0.0]);
        let v = validate_mdp(&mdp);
        assert_eq!(v.len(), 1);
        match &v[0] {
            Violation::RowSum { s, a, sum } => {
                assert_eq!((*s, *a), (0, 0));
                assert!((sum - 0.9).abs() < 1e-15);
            }
            other => panic!("unexpected violation {other:?}"),
        }
        assert!(v[0].to_string().starts_with("row sum 0.9 at (s=0,a=0)"));
    }

    #[test]
    fn negative_entry_is_reported() {
        let mdp = TabularMdp::new_unchecked(2, 1, vec![-0.1, 1.1, 0.0, 1.0], vec![0.0, 0.0]);
        let v = validate_mdp(&mdp);
        assert!(matches!(v[0], Violation::NegativeEntry { s: 0, a: 0, next: 0, .. }));
        assert!(v[0].to_string().contains("negative entry"));
        assert!(TabularMdp::new(2, 1, vec![-0.1, 1.1, 0.0, 1.0], vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn non_finite_reward_is_reported() {
        let mdp = TabularMdp::new_unchecked(1, 1, vec![1.0], vec![f64::NAN]);
        assert!(matches!(validate_mdp(&mdp)[0], Violation::NonFiniteReward { s: 0, .. }));
    }

    #[test]
    fn deterministic_kernel_is_permutation() {
        let mdp = TabularMdp::swap_chain();
        let pi = PolicyTable::deterministic(1, &[0, 0]).unwrap();
        let p = policy_transition_matrix(&mdp, &pi).unwrap();
        assert_eq!(p.as_slice(), &[0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn uniform_policy_mixes_one_hots() {
        // From state 0, action 0 goes to s0 and action 1 to s1.
        let t = vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0];
        let mdp = TabularMdp::new(2, 2, t, vec![0.0; 2]).unwrap();
        let p = policy_transition_matrix(&mdp, &PolicyTable::uniform(2, 2)).unwrap();
        assert_eq!(p.row(0), &[0.5, 0.5]);
    }

    #[test]
    fn random_kernel_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let mdp = TabularMdp::random(5, 3, &mut rng);
            let pi = PolicyTable::random(5, 3, &mut rng);
            let p = policy_transition_matrix(&mdp, &pi).unwrap();
            for s in 0..5 {
                assert!((p.row(s).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn kernel_rejects_mismatched_policy() {
        let mdp = TabularMdp::swap_chain();
        assert!(policy_transition_matrix(&mdp, &PolicyTable::uniform(3, 1)).is_err());
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
    }
}
