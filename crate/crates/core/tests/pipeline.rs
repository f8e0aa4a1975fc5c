//! End-to-end use of the public API across modules.

use gamma_model::expansion::{gamma_mve_estimate, value_map};
use gamma_model::oracle::{exact_occupancy, policy_evaluation};
use gamma_model::td::{expected_td_converge, max_row_tv, sampled_td_train};
use gamma_model::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn sampled_model_value_map_tracks_oracle_on_swap_chain() {
    let mdp = TabularMdp::swap_chain();
    let pi = PolicyTable::uniform(2, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let data = collect_dataset(&MdpEnv::uniform_start(mdp.clone()), &pi, 5_000, 50, &mut rng).unwrap();
    let config = TrainConfig {
        gamma: 0.5,
        steps: 20_000,
        log_every: 0,
        ..TrainConfig::default()
    };
    let out = sampled_td_train(&data, &pi, &config, &mut rng).unwrap();
    let map = value_map(&out.model, &pi, mdp.reward()).unwrap();
    let (v, _) = policy_evaluation(&mdp, &pi, 0.5).unwrap();
    for (a, b) in map.values.iter().zip(&v.values) {
        assert!((a - b).abs() < 0.05, "{a} vs {b}");
    }
}

#[test]
fn expected_training_on_gridworld_reaches_exact_occupancy() {
    let grid = Gridworld::new(4).unwrap();
    let mdp = grid.to_mdp();
    let pi = PolicyTable::uniform(mdp.n_states(), mdp.n_actions());
    let init = GammaModelTable::uniform(mdp.n_states(), mdp.n_actions(), 0.7).unwrap();
    let (model, sweeps) = expected_td_converge(&init, &mdp, &pi, 1e-13, 1_000).unwrap();
    assert!(sweeps < 1_000);
    let exact = exact_occupancy(&mdp, &pi, 0.7).unwrap();
    assert!(max_row_tv(&model, &exact.table) < 1e-11);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn gamma_mve_with_exact_inputs_is_exact(
        seed in 0u64..1_000,
        n in 2usize..8,
        na in 1usize..4,
        gamma in 0.0f64..0.9,
        extra in 0.0f64..1.0,
        horizon in 1usize..12,
    ) {
        let gt = gamma + (0.97 - gamma) * extra;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mdp = TabularMdp::random(n, na, &mut rng);
        let pi = PolicyTable::random(n, na, &mut rng);
        let model = GammaModelTable::from_probs(&exact_occupancy(&mdp, &pi, gamma).unwrap().table, gamma).unwrap();
        let (v, _) = policy_evaluation(&mdp, &pi, gt).unwrap();
        for s in 0..n {
            let est = gamma_mve_estimate(&model, &pi, &v, mdp.reward(), s, horizon, gt).unwrap();
            prop_assert!((est.value - v.values[s]).abs() <= 1e-8);
            prop_assert!((est.model_term + est.terminal_term - est.value).abs() <= 1e-12);
        }
    }

    #[test]
    fn model_file_text_survives_reload(seed in 0u64..1_000, n in 1usize..6, na in 1usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mdp = TabularMdp::random(n, na, &mut rng);
        let pi = PolicyTable::random(n, na, &mut rng);
        let file = ModelFile::new(0.6, exact_occupancy(&mdp, &pi, 0.6).unwrap().table);
        let mut first = Vec::new();
        file.write(&mut first).unwrap();
        let reread = ModelFile::read(first.as_slice()).unwrap();
        prop_assert_eq!(&reread.table, &file.table);
        let mut second = Vec::new();
        reread.write(&mut second).unwrap();
        prop_assert_eq!(first, second);
    }
}
