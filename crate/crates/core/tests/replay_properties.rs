use bedwarden_core::des::RngStream;
use bedwarden_core::env::{ActionIndex, Observation};
use bedwarden_core::replay::{PriorityConfig, ReplayMemory, SumTree, Transition};
use proptest::prelude::*;

fn tr(tag: usize) -> Transition {
    Transition {
        state: Observation(vec![tag as f64]),
        action: ActionIndex(0),
        reward: tag as f64,
        next_state: Observation(vec![tag as f64 + 1.0]),
        terminal: false,
    }
}

proptest! {
    #[test]
    fn sum_tree_total_tracks_leaves(updates in prop::collection::vec((0usize..37, 0.0f64..10.0), 1..300)) {
        let mut tree = SumTree::new(37);
        let mut naive = vec![0.0; 37];
        for (i, v) in updates {
            tree.set(i, v);
            naive[i] = v;
            let sum: f64 = naive.iter().sum();
            prop_assert!((tree.total() - sum).abs() <= 1e-9 * sum.max(1.0));
        }
    }

    #[test]
    fn ring_keeps_latest(capacity in 1usize..20, pushes in 0usize..60) {
        let mut m = ReplayMemory::uniform(capacity);
        for i in 0..pushes {
            m.push(tr(i));
        }
        prop_assert_eq!(m.len(), pushes.min(capacity));
        let mut stored: Vec<f64> = (0..m.len()).map(|i| m.get(i).unwrap().reward).collect();
        stored.sort_by(f64::total_cmp);
        let expected: Vec<f64> = (pushes.saturating_sub(capacity)..pushes).map(|i| i as f64).collect();
        prop_assert_eq!(stored, expected);
    }

    #[test]
    fn probabilities_and_weights_are_normalised(
        td in prop::collection::vec(0.0f64..20.0, 1..40),
        alpha in 0.0f64..1.0,
        beta in 0.0f64..1.0,
        seed in any::<u64>(),
    ) {
        let n = td.len();
        let mut m = ReplayMemory::prioritized(n, PriorityConfig { alpha, ..Default::default() });
        for i in 0..n {
            m.push(tr(i));
        }
        m.update_priorities(&(0..n).collect::<Vec<_>>(), &td).unwrap();
        for (i, d) in td.iter().enumerate() {
            prop_assert_eq!(m.priority(i).unwrap(), d.abs() + 1e-6);
        }
        let probs = m.probabilities().unwrap();
        prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let batch = m.sample_prioritized(32, &mut RngStream::new(seed), beta).unwrap();
        let max = batch.weights.iter().cloned().fold(f64::MIN, f64::max);
        prop_assert_eq!(max, 1.0);
        prop_assert!(batch.weights.iter().all(|&w| w > 0.0 && w <= 1.0));
        prop_assert!(batch.indices.iter().all(|&i| i < n));
    }
}

#[test]
fn new_items_get_max_priority() {
    let mut m = ReplayMemory::prioritized(4, PriorityConfig::default());
    m.push(tr(0));
    assert_eq!(m.priority(0), Some(1.0));
    m.update_priorities(&[0], &[7.0]).unwrap();
    m.push(tr(1));
    assert_eq!(m.priority(1), Some(7.0 + 1e-6));
}

#[test]
fn beta_anneals_linearly() {
    let cfg = PriorityConfig::default();
    assert_eq!(cfg.beta_at(0, 100), 0.4);
    assert!((cfg.beta_at(50, 100) - 0.7).abs() < 1e-12);
    assert_eq!(cfg.beta_at(100, 100), 1.0);
    assert_eq!(cfg.beta_at(1_000, 100), 1.0);
}

#[test]
fn empty_memory_cannot_sample() {
    let m = ReplayMemory::uniform(4);
    assert!(m.sample_uniform(1, &mut RngStream::new(0)).is_err());
    assert!(ReplayMemory::uniform(4).probabilities().is_err());
}
