//! Fixed inputs shared by the benchmarks.

use gamma_model::{collect_dataset, GammaModelTable, MdpEnv, PolicyTable, TabularMdp, TransitionDataset};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Seeded random MDP with a seeded random policy.
pub fn random_problem(n_states: usize, n_actions: usize, seed: u64) -> (TabularMdp, PolicyTable) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mdp = TabularMdp::random(n_states, n_actions, &mut rng);
    let policy = PolicyTable::random(n_states, n_actions, &mut rng);
    (mdp, policy)
}

/// On-policy transitions from a uniform start distribution.
pub fn dataset(mdp: &TabularMdp, policy: &PolicyTable, n: usize, seed: u64) -> TransitionDataset {
    let env = MdpEnv::uniform_start(mdp.clone());
    collect_dataset(&env, policy, n, 100, &mut ChaCha8Rng::seed_from_u64(seed))
        .expect("fixture sizes are positive")
}

pub fn uniform_model(mdp: &TabularMdp, gamma: f64) -> GammaModelTable {
    GammaModelTable::uniform(mdp.n_states(), mdp.n_actions(), gamma).expect("gamma in range")
}
