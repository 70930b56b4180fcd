//! Experience replay: a ring buffer of transitions with uniform,
//! proportional-prioritised, and bootstrap sampling.

mod sum_tree;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::des::RngStream;
use crate::env::{ActionIndex, Observation};

pub use sum_tree::SumTree;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Observation,
    pub action: ActionIndex,
    pub reward: f64,
    pub next_state: Observation,
    pub terminal: bool,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReplayError {
    #[error("memory holds {size} transitions, cannot sample a batch of {requested}")]
    Insufficient { size: usize, requested: usize },
    #[error("memory is not in prioritized mode")]
    NotPrioritized,
    #[error("index {index} out of range (size {size})")]
    IndexOutOfRange { index: usize, size: usize },
    #[error("{indices} indices but {errors} td errors")]
    LengthMismatch { indices: usize, errors: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReplayMode {
    Uniform,
    Prioritized,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorityConfig {
    /// Exponent applied to priorities at sampling time.
    pub alpha: f64,
    pub beta_start: f64,
    pub beta_end: f64,
    pub priority_epsilon: f64,
}

impl Default for PriorityConfig {
    fn default() -> Self {
        Self {
            alpha: 0.6,
            beta_start: 0.4,
            beta_end: 1.0,
            priority_epsilon: 1e-6,
        }
    }
}

impl PriorityConfig {
    /// Linearly annealed importance exponent.
    pub fn beta_at(&self, step: u64, anneal_steps: u64) -> f64 {
        let frac = if anneal_steps == 0 {
            1.0
        } else {
            (step as f64 / anneal_steps as f64).min(1.0)
        };
        self.beta_start + (self.beta_end - self.beta_start) * frac
    }
}

/// A sampled minibatch. `weights` are all 1 outside prioritized sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub transitions: Vec<Transition>,
    pub weights: Vec<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct ReplayMemory {
    capacity: usize,
    items: Vec<Transition>,
    cursor: usize,
    mode: ReplayMode,
    config: PriorityConfig,
    /// Raw priorities `|td| + eps`; the tree stores them raised to `alpha`.
    priorities: Vec<f64>,
    tree: Option<SumTree>,
    max_priority: f64,
}

impl ReplayMemory {
    pub fn uniform(capacity: usize) -> Self {
        Self::new(capacity, ReplayMode::Uniform, PriorityConfig::default())
    }

    pub fn prioritized(capacity: usize, config: PriorityConfig) -> Self {
        Self::new(capacity, ReplayMode::Prioritized, config)
    }

    pub fn new(capacity: usize, mode: ReplayMode, config: PriorityConfig) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        let tree = (mode == ReplayMode::Prioritized).then(|| SumTree::new(capacity));
        Self {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            cursor: 0,
            mode,
            config,
            priorities: Vec::new(),
            tree,
            max_priority: 1.0,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn mode(&self) -> ReplayMode {
        self.mode
    }

    pub fn priority_config(&self) -> &PriorityConfig {
        &self.config
    }

    pub fn get(&self, index: usize) -> Option<&Transition> {
        self.items.get(index)
    }

    /// Stored raw priority of a slot (prioritized mode only).
    pub fn priority(&self, index: usize) -> Option<f64> {
        self.priorities.get(index).copied()
    }

    /// Stores `t`, overwriting the oldest transition once full.
    pub fn push(&mut self, t: Transition) {
        let slot = self.cursor;
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[slot] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
        if self.mode == ReplayMode::Prioritized {
            let p = self.max_priority;
            self.set_priority(slot, p);
        }
    }

    fn set_priority(&mut self, slot: usize, p: f64) {
        if slot == self.priorities.len() {
            self.priorities.push(p);
        } else {
            self.priorities[slot] = p;
        }
        let alpha = self.config.alpha;
        if let Some(tree) = self.tree.as_mut() {
            tree.set(slot, p.powf(alpha));
        }
    }

    /// Sampling is with replacement, so any non-empty memory can fill a batch.
    fn check_size(&self, batch_size: usize) -> Result<(), ReplayError> {
        if self.items.is_empty() {
            return Err(ReplayError::Insufficient {
                size: self.items.len(),
                requested: batch_size,
            });
        }
        Ok(())
    }

    fn gather(&self, indices: Vec<usize>, weights: Vec<f64>) -> Batch {
        let transitions = indices.iter().map(|&i| self.items[i].clone()).collect();
        Batch {
            indices,
            transitions,
            weights,
        }
    }

    /// Uniform sampling with replacement.
    pub fn sample_uniform(
        &self,
        batch_size: usize,
        rng: &mut RngStream,
    ) -> Result<Batch, ReplayError> {
        self.check_size(batch_size)?;
        let indices = (0..batch_size)
            .map(|_| rng.sample_index(self.items.len()))
            .collect();
        Ok(self.gather(indices, vec![1.0; batch_size]))
    }

    /// Uniform with-replacement resample of the current contents, used to give
    /// each ensemble head its own bootstrap batch.
    pub fn sample_bootstrap(
        &self,
        batch_size: usize,
        rng: &mut RngStream,
    ) -> Result<Batch, ReplayError> {
        self.check_size(batch_size)?;
        let indices = (0..batch_size)
            .map(|_| rng.sample_index(self.items.len()))
            .collect();
        Ok(self.gather(indices, vec![1.0; batch_size]))
    }

    /// Analytic sampling probability of every stored slot.
    pub fn probabilities(&self) -> Result<Vec<f64>, ReplayError> {
        let tree = self.tree.as_ref().ok_or(ReplayError::NotPrioritized)?;
        let total = tree.total();
        Ok((0..self.items.len()).map(|i| tree.get(i) / total).collect())
    }

    /// Proportional prioritized sampling with max-normalised importance weights.
    pub fn sample_prioritized(
        &self,
        batch_size: usize,
        rng: &mut RngStream,
        beta: f64,
    ) -> Result<Batch, ReplayError> {
        let tree = self.tree.as_ref().ok_or(ReplayError::NotPrioritized)?;
        self.check_size(batch_size)?;
        let n = self.items.len();
        let total = tree.total();
        let indices: Vec<usize> = (0..batch_size)
            .map(|_| tree.find(rng.sample_uniform() * total, n))
            .collect();
        let raw: Vec<f64> = indices
            .iter()
            .map(|&i| (n as f64 * tree.get(i) / total).powf(-beta))
            .collect();
        let max = raw.iter().cloned().fold(f64::MIN, f64::max);
        let weights = raw.iter().map(|w| w / max).collect();
        Ok(self.gather(indices, weights))
    }

    /// Sets `p_i = |td_i| + priority_epsilon` for each sampled slot.
    pub fn update_priorities(
        &mut self,
        indices: &[usize],
        td_errors: &[f64],
    ) -> Result<(), ReplayError> {
        if self.mode != ReplayMode::Prioritized {
            return Err(ReplayError::NotPrioritized);
        }
        if indices.len() != td_errors.len() {
            return Err(ReplayError::LengthMismatch {
                indices: indices.len(),
                errors: td_errors.len(),
            });
        }
        if let Some(&index) = indices.iter().find(|&&i| i >= self.items.len()) {
            return Err(ReplayError::IndexOutOfRange {
                index,
                size: self.items.len(),
            });
        }
        for (&i, &td) in indices.iter().zip(td_errors) {
            let p = td.abs() + self.config.priority_epsilon;
            self.max_priority = self.max_priority.max(p);
            self.set_priority(i, p);
        }
        Ok(())
    }
}
