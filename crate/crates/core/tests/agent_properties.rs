use bedwarden_core::agents::{argmax, compute_targets, epsilon_at, Agent, AgentConfig, Variant};
use bedwarden_core::des::RngStream;
use bedwarden_core::env::{ActionIndex, Observation};
use bedwarden_core::neural::{NetworkArch, QNetwork};
use bedwarden_core::replay::Transition;
use proptest::prelude::*;

fn small(variant: Variant) -> AgentConfig {
    AgentConfig {
        variant,
        hidden: vec![8, 8],
        n_heads: 3,
        ..AgentConfig::for_variant(variant)
    }
}

fn tr(state: Vec<f64>, action: usize, reward: f64, terminal: bool) -> Transition {
    Transition {
        next_state: Observation(state.iter().map(|v| v + 0.5).collect()),
        state: Observation(state),
        action: ActionIndex(action),
        reward,
        terminal,
    }
}

#[test]
fn selection_never_returns_masked_actions() {
    let mut rng = RngStream::new(3);
    for variant in [Variant::D3qn, Variant::NoisyD3qn, Variant::BootstrappedD3qn] {
        let mut agent = Agent::new(small(variant), 5, 9, 1).unwrap();
        agent.begin_episode();
        for _ in 0..100_000 / 3 {
            let obs = Observation((0..5).map(|_| rng.sample_standard_normal()).collect());
            let mut mask: Vec<bool> = (0..9).map(|_| rng.sample_uniform() < 0.4).collect();
            let forced = rng.sample_index(9);
            mask[forced] = true;
            agent.set_epsilon(rng.sample_uniform());
            let explore = rng.sample_index(2) == 0;
            let a = agent.select_action(&obs, &mask, explore).unwrap();
            assert!(mask[a.0]);
        }
    }
}

#[test]
fn terminal_targets_ignore_networks() {
    let mut rng = RngStream::new(4);
    let batch = vec![
        tr(vec![0.3, -1.0], 1, -2.5, true),
        tr(vec![1.0, 2.0], 0, 4.0, true),
    ];
    let mut ys = Vec::new();
    for _ in 0..5 {
        let p = QNetwork::new(NetworkArch::new(2, 3), &mut rng);
        let t = QNetwork::new(NetworkArch::new(2, 3), &mut rng);
        ys.push(compute_targets(&p, &t, &batch, 0.99).unwrap());
    }
    assert!(ys.iter().all(|y| y == &vec![-2.5, 4.0]));
}

#[test]
fn zero_discount_regresses_to_reward() {
    let cfg = AgentConfig {
        gamma: 0.0,
        batch_size: 1,
        ..small(Variant::D2qn)
    };
    let mut agent = Agent::new(cfg, 2, 3, 6).unwrap();
    let s = vec![0.4, -0.2];
    agent.observe(tr(s.clone(), 2, -3.7, true));
    let obs = Observation(s);
    let mut converged_at = None;
    for step in 1..=2_000 {
        agent.learn_step().unwrap();
        let q = agent.evaluate_q(&obs).unwrap()[2];
        if (q + 3.7).abs() < 1e-2 {
            converged_at = Some(step);
            break;
        }
    }
    assert!(
        converged_at.is_some(),
        "Q = {}",
        agent.evaluate_q(&obs).unwrap()[2]
    );
}

#[test]
fn prioritized_learn_step_sets_td_priority() {
    let cfg = AgentConfig {
        batch_size: 1,
        ..small(Variant::PerD3qn)
    };
    let mut agent = Agent::new(cfg, 2, 3, 2).unwrap();
    let t = tr(vec![0.1, 0.9], 1, -1.5, false);
    agent.observe(t.clone());
    let head = &agent.heads()[0];
    let y = compute_targets(&head.policy, &head.target, std::slice::from_ref(&t), 0.99).unwrap()[0];
    let q = head.policy.q_values(t.state.as_slice()).unwrap()[1];
    agent.learn_step().unwrap();
    let p = agent.memory().priority(0).unwrap();
    assert!(
        (p - ((q - y).abs() + 1e-6)).abs() < 1e-12,
        "{p} vs {}",
        (q - y).abs() + 1e-6
    );
}

#[test]
fn heads_sync_pairwise() {
    let cfg = AgentConfig {
        batch_size: 4,
        ..small(Variant::BootstrappedD3qn)
    };
    let mut agent = Agent::new(cfg, 2, 3, 8).unwrap();
    agent.begin_episode();
    for i in 0..30 {
        agent.observe(tr(vec![i as f64 / 30.0, 1.0], i % 3, -(i as f64), i == 29));
        agent.learn_step().unwrap();
    }
    agent.end_episode().unwrap();
    let params = |n: &QNetwork| n.parameters().concat();
    let heads = agent.heads();
    for (k, head) in heads.iter().enumerate() {
        assert_eq!(params(&head.target), params(&head.policy));
        for (j, other) in heads.iter().enumerate() {
            if j != k {
                assert_ne!(params(&head.target), params(&other.policy));
            }
        }
    }
    let before: Vec<Vec<f64>> = heads.iter().map(|h| params(&h.target)).collect();
    agent.sync_target().unwrap();
    let after: Vec<Vec<f64>> = agent.heads().iter().map(|h| params(&h.target)).collect();
    assert_eq!(before, after);
}

#[test]
fn single_head_ensemble_matches_forward() {
    let cfg = AgentConfig {
        n_heads: 1,
        ..small(Variant::BootstrappedD3qn)
    };
    let mut agent = Agent::new(cfg, 2, 3, 1).unwrap();
    let obs = Observation(vec![0.2, 0.7]);
    let direct = agent.heads()[0].policy.q_values(obs.as_slice()).unwrap();
    assert_eq!(agent.evaluate_q(&obs).unwrap(), direct);
}

#[test]
fn non_bootstrapped_uses_head_zero_and_epsilon_decays() {
    let cfg = small(Variant::D3qn);
    let mut agent = Agent::new(cfg.clone(), 2, 3, 1).unwrap();
    let mut last = f64::INFINITY;
    for _ in 0..300 {
        agent.begin_episode();
        assert_eq!(agent.active_head(), 0);
        assert!(agent.epsilon() <= last);
        last = agent.epsilon();
    }
    assert_eq!(last, cfg.epsilon_min);
    assert!((epsilon_at(&cfg, 2) - 0.9409).abs() < 1e-12);
}

proptest! {
    #[test]
    fn bagged_argmax_is_shift_invariant(shift in -50.0f64..50.0, seed in any::<u64>()) {
        let mut agent = Agent::new(small(Variant::BootstrappedD3qn), 2, 4, seed).unwrap();
        let obs = Observation(vec![0.3, -0.6]);
        let before = argmax(&agent.evaluate_q(&obs).unwrap(), None);
        for head in agent.heads_mut() {
            // The value stream's bias adds a constant to every action's Q.
            let mut params = head.policy.parameters_mut();
            let n = params.len();
            params[n - 3][0] += shift;
        }
        prop_assert_eq!(argmax(&agent.evaluate_q(&obs).unwrap(), None), before);
    }

    #[test]
    fn argmax_respects_mask_and_ties(values in prop::collection::vec(-3i32..3, 1..10), mask_bits in any::<u16>()) {
        let values: Vec<f64> = values.into_iter().map(f64::from).collect();
        let mask: Vec<bool> = (0..values.len()).map(|i| mask_bits >> i & 1 == 1).collect();
        let picked = argmax(&values, Some(&mask));
        let oracle = (0..values.len())
            .filter(|&i| mask[i])
            .fold(None, |best: Option<usize>, i| match best {
                Some(b) if values[b] >= values[i] => Some(b),
                _ => Some(i),
            });
        prop_assert_eq!(picked, oracle);
    }
}
