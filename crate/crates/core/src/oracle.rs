//! Exact ground truth: successor representation, discounted occupancy,
//! policy evaluation and value iteration, plus Monte Carlo occupancy sampling.
//!
//! Rewards follow the exit-state convention: `Q(s, a) = sum_{dt >= 1}
//! gamma^(dt-1) E[r(s_{t+dt})]`, so `Q = (1 / (1 - gamma)) * <mu(.|s,a), r>`.

use rand::Rng;

use crate::error::{check_discount, Error, Result};
use crate::linalg::{axpy, dot};
use crate::mdp::{argmax, check_policy_shape, policy_transition_matrix, PolicyTable, TabularMdp};
use crate::tables::{ExitTable, QTable, VTable};

/// Expected discounted visitation counts `M(s_e | s, a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SuccessorTable {
    pub table: ExitTable,
    pub gamma: f64,
}

/// Normalized discounted occupancy `mu(s_e | s, a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyTable {
    pub table: ExitTable,
    pub gamma: f64,
}

impl OccupancyTable {
    pub fn row(&self, s: usize, a: usize) -> &[f64] {
        self.table.row(s, a)
    }
}

impl SuccessorTable {
    pub fn row(&self, s: usize, a: usize) -> &[f64] {
        self.table.row(s, a)
    }
}

/// `M[s][a] = p(.|s,a) (I - gamma P_pi)^{-1}`.
pub fn exact_successor(
    mdp: &TabularMdp,
    policy: &PolicyTable,
    gamma: f64,
) -> Result<SuccessorTable> {
    check_discount(gamma)?;
    let p_pi = policy_transition_matrix(mdp, policy)?;
    let inv = p_pi.resolvent(gamma)?;
    let (n, na) = (mdp.n_states(), mdp.n_actions());
    let mut table = ExitTable::zeros(n, na);
    for s in 0..n {
        for a in 0..na {
            table.row_mut(s, a).copy_from_slice(&inv.left_mul(mdp.transition_row(s, a)));
        }
    }
    Ok(SuccessorTable { table, gamma })
}

/// Solves the occupancy fixed point
/// `mu(.|s,a) = (1 - gamma) p(.|s,a) + gamma sum_s' p(s'|s,a) mu_pi(.|s')`.
///
/// The state-conditioned occupancy `U = (1 - gamma)(I - gamma P_pi)^{-1} P_pi`
/// comes from a matrix solve that never forms the inverse, so this path is
/// independent of [`exact_successor`].
pub fn exact_occupancy(
    mdp: &TabularMdp,
    policy: &PolicyTable,
    gamma: f64,
) -> Result<OccupancyTable> {
    check_discount(gamma)?;
    let p_pi = policy_transition_matrix(mdp, policy)?;
    let mut state_occ = p_pi.solve_shifted_matrix(gamma, &p_pi)?;
    for i in 0..state_occ.rows() {
        state_occ.row_mut(i).iter_mut().for_each(|x| *x *= 1.0 - gamma);
    }
    let (n, na) = (mdp.n_states(), mdp.n_actions());
    let mut table = ExitTable::zeros(n, na);
    for s in 0..n {
        for a in 0..na {
            let p = mdp.transition_row(s, a);
            let row = table.row_mut(s, a);
            for (dst, &pi) in row.iter_mut().zip(p) {
                *dst = (1.0 - gamma) * pi;
            }
            for (next, &w) in p.iter().enumerate() {
                if w != 0.0 {
                    axpy(gamma * w, state_occ.row(next), row);
                }
            }
        }
    }
    Ok(OccupancyTable { table, gamma })
}

/// Draws the exit time `dt ~ Geom(1 - gamma)` on `{1, 2, ...}` by inverse CDF.
pub fn sample_exit_time<R: Rng + ?Sized>(gamma: f64, rng: &mut R) -> usize {
    if gamma == 0.0 {
        return 1;
    }
    // u in (0, 1]
    let u = 1.0 - rng.random::<f64>();
    1 + (u.ln() / gamma.ln()).floor() as usize
}

/// Empirical exit-state distribution from `(s, a)` over `n_samples` draws.
pub fn monte_carlo_occupancy<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    policy: &PolicyTable,
    gamma: f64,
    s: usize,
    a: usize,
    n_samples: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    check_discount(gamma)?;
    check_policy_shape(mdp, policy)?;
    if n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be at least 1".into()));
    }
    if s >= mdp.n_states() || a >= mdp.n_actions() {
        return Err(Error::InvalidArgument(format!("({s}, {a}) out of range")));
    }
    let mut counts = vec![0usize; mdp.n_states()];
    for _ in 0..n_samples {
        let dt = sample_exit_time(gamma, rng);
        let mut state = mdp.sample_next(s, a, rng);
        for _ in 1..dt {
            let action = policy.sample(state, rng);
            state = mdp.sample_next(state, action, rng);
        }
        counts[state] += 1;
    }
    Ok(counts
        .into_iter()
        .map(|c| c as f64 / n_samples as f64)
        .collect())
}

/// Exact `V^pi` and `Q^pi` by solving `(I - gamma P_pi) V = P_pi r`.
pub fn policy_evaluation(
    mdp: &TabularMdp,
    policy: &PolicyTable,
    gamma: f64,
) -> Result<(VTable, QTable)> {
    check_discount(gamma)?;
    let p_pi = policy_transition_matrix(mdp, policy)?;
    let rhs = p_pi.mul_vec(mdp.reward());
    let v = p_pi.solve_shifted(gamma, &rhs)?;
    let q = q_from_values(mdp, gamma, &v);
    Ok((VTable { values: v }, q))
}

/// One-step lookahead `Q(s,a) = sum_s' p(s'|s,a) (r(s') + gamma V(s'))`.
pub fn q_from_values(mdp: &TabularMdp, gamma: f64, v: &[f64]) -> QTable {
    let backup: Vec<f64> = mdp
        .reward()
        .iter()
        .zip(v)
        .map(|(r, v)| r + gamma * v)
        .collect();
    let mut q = QTable::zeros(mdp.n_states(), mdp.n_actions());
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            q.set(s, a, dot(mdp.transition_row(s, a), &backup));
        }
    }
    q
}

/// Sup-norm of `T* V - V` for the Bellman optimality operator.
pub fn bellman_optimality_residual(mdp: &TabularMdp, gamma: f64, v: &[f64]) -> f64 {
    let q = q_from_values(mdp, gamma, v);
    (0..mdp.n_states())
        .map(|s| (q.row(s)[argmax(q.row(s))] - v[s]).abs())
        .fold(0.0, f64::max)
}

/// Optimal values by value iteration, stopped once the Bellman optimality
/// residual of the returned table is at most `tolerance`, with the greedy
/// deterministic policy (lowest action index on exact ties).
pub fn value_iteration(
    mdp: &TabularMdp,
    gamma: f64,
    tolerance: f64,
) -> Result<(VTable, PolicyTable)> {
    check_discount(gamma)?;
    if !(tolerance > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "tolerance must be positive, got {tolerance}"
        )));
    }
    let n = mdp.n_states();
    let mut v = vec![0.0; n];
    loop {
        let q = q_from_values(mdp, gamma, &v);
        let next: Vec<f64> = (0..n).map(|s| q.row(s)[argmax(q.row(s))]).collect();
        let residual = next
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if residual <= tolerance {
            let actions: Vec<usize> = (0..n).map(|s| argmax(q.row(s))).collect();
            let policy = PolicyTable::deterministic(mdp.n_actions(), &actions)?;
            return Ok((VTable { values: v }, policy));
        }
        v = next;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::Gridworld;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn swap() -> (TabularMdp, PolicyTable) {
        (TabularMdp::swap_chain(), PolicyTable::uniform(2, 1))
    }

    /// 0 -> 1 -> 2, state 2 absorbing with reward 1.
    fn chain3() -> TabularMdp {
        let t = vec![
            0.0, 1.0, 0.0, //
            0.0, 0.0, 1.0, //
            0.0, 0.0, 1.0,
        ];
        TabularMdp::new(3, 1, t, vec![0.0, 0.0, 1.0]).unwrap()
    }

    #[test]
    fn successor_at_zero_discount_is_transition() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mdp = TabularMdp::random(4, 2, &mut rng);
        let pi = PolicyTable::random(4, 2, &mut rng);
        let m = exact_successor(&mdp, &pi, 0.0).unwrap();
        for s in 0..4 {
            for a in 0..2 {
                for (x, y) in m.row(s, a).iter().zip(mdp.transition_row(s, a)) {
                    assert!((x - y).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn swap_chain_successor_by_hand() {
        let (mdp, pi) = swap();
        let m = exact_successor(&mdp, &pi, 0.5).unwrap();
        assert!((m.row(0, 0)[1] - 4.0 / 3.0).abs() < 1e-14);
        assert!((m.row(0, 0)[0] - 2.0 / 3.0).abs() < 1e-14);
        assert!((m.row(0, 0).iter().sum::<f64>() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn swap_chain_occupancy_by_hand() {
        let (mdp, pi) = swap();
        let mu = exact_occupancy(&mdp, &pi, 0.5).unwrap();
        assert!((mu.row(0, 0)[0] - 1.0 / 3.0).abs() < 1e-14);
        assert!((mu.row(0, 0)[1] - 2.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn occupancy_at_zero_discount_is_transition() {
        let (mdp, pi) = swap();
        let mu = exact_occupancy(&mdp, &pi, 0.0).unwrap();
        assert_eq!(mu.row(0, 0), mdp.transition_row(0, 0));
    }

    #[test]
    fn absorbing_state_keeps_all_mass() {
        let mdp = chain3();
        let mu = exact_occupancy(&mdp, &PolicyTable::uniform(3, 1), 0.9).unwrap();
        assert!((mu.row(2, 0)[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_unit_discount() {
        let (mdp, pi) = swap();
        assert!(matches!(exact_successor(&mdp, &pi, 1.0), Err(Error::InvalidDiscount(_))));
        assert!(exact_occupancy(&mdp, &pi, 1.0).is_err());
        assert!(policy_evaluation(&mdp, &pi, 1.2).is_err());
        assert!(value_iteration(&mdp, 1.0, 1e-6).is_err());
    }

    #[test]
    fn successor_satisfies_recurrence() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mdp = TabularMdp::random(8, 3, &mut rng);
        let pi = PolicyTable::random(8, 3, &mut rng);
        let gamma = 0.85;
        let m = exact_successor(&mdp, &pi, gamma).unwrap();
        for s in 0..8 {
            for a in 0..3 {
                let p = mdp.transition_row(s, a);
                for e in 0..8 {
                    let mut rhs = p[e];
                    for (next, &w) in p.iter().enumerate() {
                        let m_next: f64 = (0..3).map(|b| pi.row(next)[b] * m.row(next, b)[e]).sum();
                        rhs += gamma * w * m_next;
                    }
                    assert!((m.row(s, a)[e] - rhs).abs() <= 1e-9);
                }
                assert!((m.row(s, a).iter().sum::<f64>() - 1.0 / (1.0 - gamma)).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn geometric_exit_time_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        assert_eq!(sample_exit_time(0.0, &mut rng), 1);
        let n = 200_000;
        let mean = (0..n).map(|_| sample_exit_time(0.75, &mut rng) as f64).sum::<f64>() / n as f64;
        // E[dt] = 1 / (1 - gamma) = 4; std = sqrt(gamma)/(1-gamma) ~ 3.46
        assert!((mean - 4.0).abs() < 5.0 * 3.46 / (n as f64).sqrt());
    }

    #[test]
    fn monte_carlo_zero_discount_is_one_step() {
        let (mdp, pi) = swap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = monte_carlo_occupancy(&mdp, &pi, 0.0, 0, 0, 1000, &mut rng).unwrap();
        assert_eq!(d, vec![0.0, 1.0]);
    }

    #[test]
    fn monte_carlo_swap_chain() {
        let (mdp, pi) = swap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let d = monte_carlo_occupancy(&mdp, &pi, 0.5, 0, 0, 100_000, &mut rng).unwrap();
        let exact = exact_occupancy(&mdp, &pi, 0.5).unwrap();
        assert!(crate::linalg::tv_distance(&d, exact.row(0, 0)) <= 0.01);
    }

    #[test]
    fn monte_carlo_self_loop() {
        let mdp = TabularMdp::new(2, 1, vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = monte_carlo_occupancy(&mdp, &PolicyTable::uniform(2, 1), 0.9, 1, 0, 500, &mut rng)
            .unwrap();
        assert_eq!(d, vec![0.0, 1.0]);
    }

    #[test]
    fn zero_reward_values_vanish() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mdp = TabularMdp::random(5, 2, &mut rng).with_reward(vec![0.0; 5]).unwrap();
        let (v, q) = policy_evaluation(&mdp, &PolicyTable::uniform(5, 2), 0.9).unwrap();
        assert!(v.values.iter().chain(&q.values).all(|&x| x == 0.0));
    }

    #[test]
    fn chain_values_by_series() {
        let gamma = 0.7;
        let (v, q) = policy_evaluation(&chain3(), &PolicyTable::uniform(3, 1), gamma).unwrap();
        // Distance k to the rewarding absorbing state gives gamma^(k-1) / (1 - gamma).
        let series = |k: i32| (0..2000).map(|t| gamma.powi(k - 1 + t)).sum::<f64>();
        assert!((q.get(0, 0) - series(2)).abs() < 1e-9);
        assert!((q.get(1, 0) - series(1)).abs() < 1e-9);
        assert!((v.values[0] - gamma / (1.0 - gamma)).abs() < 1e-12);
    }

    #[test]
    fn q_matches_occupancy_expectation() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mdp = TabularMdp::random(10, 3, &mut rng);
        let pi = PolicyTable::random(10, 3, &mut rng);
        let gamma = 0.9;
        let (v, q) = policy_evaluation(&mdp, &pi, gamma).unwrap();
        let mu = exact_occupancy(&mdp, &pi, gamma).unwrap();
        for s in 0..10 {
            for a in 0..3 {
                let via_mu = dot(mu.row(s, a), mdp.reward()) / (1.0 - gamma);
                assert!((q.get(s, a) - via_mu).abs() <= 1e-9);
            }
            let vs: f64 = (0..3).map(|a| pi.row(s)[a] * q.get(s, a)).sum();
            assert!((vs - v.values[s]).abs() <= 1e-9);
        }
    }

    #[test]
    fn gridworld_value_iteration_by_hand() {
        let g = Gridworld::new(3).unwrap();
        let mdp = g.to_mdp();
        let gamma = 0.9;
        let (v, pi) = value_iteration(&mdp, gamma, 1e-12).unwrap();
        for s in 0..9 {
            let d = g.distance_to_goal(s) as i32;
            let expected = gamma.powi((d - 1).max(0)) / (1.0 - gamma);
            assert!((v.values[s] - expected).abs() < 1e-9, "state {s}");
        }
        assert!(bellman_optimality_residual(&mdp, gamma, &v.values) <= 1e-12);
        // From the start, down (1) and right (3) tie; the lower index wins.
        assert_eq!(pi.greedy_action(g.start_state()), 1);
    }

    #[test]
    fn value_iteration_zero_discount_is_one_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mdp = TabularMdp::random(6, 3, &mut rng);
        let (v, _) = value_iteration(&mdp, 0.0, 1e-12).unwrap();
        for s in 0..6 {
            let best = (0..3)
                .map(|a| dot(mdp.transition_row(s, a), mdp.reward()))
                .fold(f64::NEG_INFINITY, f64::max);
            assert!((v.values[s] - best).abs() < 1e-15);
        }
    }

    #[test]
    fn greedy_policy_is_tolerance_stable() {
        let mdp = Gridworld::new(5).unwrap().to_mdp();
        let (_, tight) = value_iteration(&mdp, 0.95, 1e-10).unwrap();
        let (_, loose) = value_iteration(&mdp, 0.95, 1e-6).unwrap();
        assert_eq!(tight, loose);
    }

    #[test]
    fn value_iteration_rejects_bad_tolerance() {
        assert!(value_iteration(&TabularMdp::swap_chain(), 0.5, 0.0).is_err());
    }
}
