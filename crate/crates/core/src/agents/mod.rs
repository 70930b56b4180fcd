//! Deep Q-learning agents: epsilon-greedy selection over legal actions,
//! double-Q targets, replay-driven learn steps, hard target synchronisation,
//! and a bootstrapped ensemble aggregated by averaging at evaluation time.

mod checkpoint;
mod config;

use thiserror::Error;

use crate::des::RngStream;
use crate::env::{ActionIndex, Observation};
use crate::neural::{huber_loss_weighted, AdamState, NetworkArch, NeuralError, QNetwork, Tensor2D};
use crate::replay::{Batch, ReplayError, ReplayMemory, ReplayMode, Transition};

pub use checkpoint::{AgentMeta, AGENT_FORMAT};
pub use config::{epsilon_at, AgentConfig, Features, Variant};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("unknown agent variant {0:?} (valid: d2qn, d3qn, noisy_d3qn, per_d3qn, bootstrapped_d3qn, combined)")]
    UnknownVariant(String),
    #[error("invalid agent config: {0}")]
    InvalidConfig(String),
    #[error("no legal action available")]
    NoLegalAction,
    #[error("observation has length {got}, expected {expected}")]
    ObservationSize { expected: usize, got: usize },
    #[error("legal mask has length {got}, expected {expected}")]
    MaskSize { expected: usize, got: usize },
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: String, message: String },
}

/// One policy/target pair with its own optimiser and sampling stream.
#[derive(Debug, Clone)]
pub struct QHead {
    pub policy: QNetwork,
    pub target: QNetwork,
    pub adam: AdamState,
    rng: RngStream,
}

impl QHead {
    fn new(policy: QNetwork, config: &AgentConfig, rng: RngStream) -> Self {
        let mut target = policy.clone();
        if target.is_noisy() {
            target.zero_noise().expect("noisy");
        }
        let adam = AdamState::new(config.adam, &policy.parameters());
        Self {
            policy,
            target,
            adam,
            rng,
        }
    }
}

/// Double-Q targets: `r` for terminal rows, otherwise
/// `r + gamma * Q_target(s', argmax_a Q_policy(s', a))`.
///
/// Noise in either network is used as-is; callers zero it first.
pub fn compute_targets(
    policy: &QNetwork,
    target: &QNetwork,
    transitions: &[Transition],
    gamma: f64,
) -> Result<Vec<f64>, NeuralError> {
    let live: Vec<usize> = (0..transitions.len())
        .filter(|&i| !transitions[i].terminal)
        .collect();
    let mut y: Vec<f64> = transitions.iter().map(|t| t.reward).collect();
    if live.is_empty() {
        return Ok(y);
    }
    let next: Vec<&[f64]> = live
        .iter()
        .map(|&i| transitions[i].next_state.as_slice())
        .collect();
    let next = Tensor2D::from_rows(&next)?;
    let q_policy = policy.forward(&next)?;
    let q_target = target.forward(&next)?;
    for (row, &i) in live.iter().enumerate() {
        let best = argmax(q_policy.row(row), None).expect("non-empty action set");
        y[i] += gamma * q_target.get(row, best);
    }
    Ok(y)
}

/// Index of the largest value among allowed entries; ties go to the lowest index.
pub fn argmax(values: &[f64], mask: Option<&[bool]>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        if mask.is_some_and(|m| !m[i]) {
            continue;
        }
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

/// A deep Q-learning agent of any [`Variant`].
#[derive(Debug, Clone)]
pub struct Agent {
    config: AgentConfig,
    features: Features,
    observation_size: usize,
    action_size: usize,
    seed: u64,
    heads: Vec<QHead>,
    memory: ReplayMemory,
    rng: RngStream,
    episodes_begun: u64,
    steps: u64,
    learn_steps: u64,
    epsilon: f64,
    active_head: usize,
}

impl Agent {
    pub fn new(
        config: AgentConfig,
        observation_size: usize,
        action_size: usize,
        seed: u64,
    ) -> Result<Self, AgentError> {
        config.validate()?;
        let features = config.features();
        let arch = NetworkArch::new(observation_size, action_size)
            .with_hidden(config.hidden.clone())
            .dueling(features.dueling)
            .noisy(features.noisy);
        let mut rng = RngStream::with_stream(seed, 0);
        let heads = (0..config.heads())
            .map(|k| {
                let policy = QNetwork::new(arch.clone(), &mut rng);
                QHead::new(policy, &config, RngStream::with_stream(seed, 1 + k as u64))
            })
            .collect();
        Ok(Self::assemble(
            config,
            observation_size,
            action_size,
            seed,
            heads,
            rng,
        ))
    }

    fn assemble(
        config: AgentConfig,
        observation_size: usize,
        action_size: usize,
        seed: u64,
        heads: Vec<QHead>,
        rng: RngStream,
    ) -> Self {
        let features = config.features();
        let mode = if features.prioritized {
            ReplayMode::Prioritized
        } else {
            ReplayMode::Uniform
        };
        let memory = ReplayMemory::new(config.memory_capacity, mode, config.priority);
        let epsilon = epsilon_at(&config, 0);
        Self {
            config,
            features,
            observation_size,
            action_size,
            seed,
            heads,
            memory,
            rng,
            episodes_begun: 0,
            steps: 0,
            learn_steps: 0,
            epsilon,
            active_head: 0,
        }
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn features(&self) -> Features {
        self.features
    }

    pub fn observation_size(&self) -> usize {
        self.observation_size
    }

    pub fn action_size(&self) -> usize {
        self.action_size
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn heads(&self) -> &[QHead] {
        &self.heads
    }

    pub fn heads_mut(&mut self) -> &mut [QHead] {
        &mut self.heads
    }

    pub fn memory(&self) -> &ReplayMemory {
        &self.memory
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn set_epsilon(&mut self, epsilon: f64) {
        self.epsilon = epsilon;
    }

    pub fn active_head(&self) -> usize {
        self.active_head
    }

    pub fn episodes_begun(&self) -> u64 {
        self.episodes_begun
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn learn_steps(&self) -> u64 {
        self.learn_steps
    }

    /// Refreshes epsilon for the new episode and, for ensembles, draws the
    /// head that acts during it.
    pub fn begin_episode(&mut self) {
        self.epsilon = epsilon_at(&self.config, self.episodes_begun);
        self.active_head = if self.features.bootstrapped {
            self.rng.sample_index(self.heads.len())
        } else {
            0
        };
        self.episodes_begun += 1;
    }

    /// Hard-syncs targets every `target_sync` episodes. Call after the last
    /// step of an episode.
    pub fn end_episode(&mut self) -> Result<(), AgentError> {
        if self.episodes_begun.is_multiple_of(self.config.target_sync) {
            self.sync_target()?;
        }
        Ok(())
    }

    pub fn sync_target(&mut self) -> Result<(), AgentError> {
        for head in &mut self.heads {
            head.target.copy_parameters_from(&head.policy)?;
        }
        Ok(())
    }

    fn check_obs(&self, obs: &Observation) -> Result<(), AgentError> {
        if obs.len() != self.observation_size {
            return Err(AgentError::ObservationSize {
                expected: self.observation_size,
                got: obs.len(),
            });
        }
        Ok(())
    }

    /// Greedy Q-values with noise off; ensembles return the per-action mean.
    pub fn evaluate_q(&mut self, obs: &Observation) -> Result<Vec<f64>, AgentError> {
        self.check_obs(obs)?;
        let mut sum = vec![0.0; self.action_size];
        for head in &mut self.heads {
            if head.policy.is_noisy() {
                head.policy.zero_noise()?;
            }
            for (s, q) in sum.iter_mut().zip(head.policy.q_values(obs.as_slice())?) {
                *s += q;
            }
        }
        let n = self.heads.len() as f64;
        Ok(sum.into_iter().map(|s| s / n).collect())
    }

    /// Epsilon-greedy choice among legal actions. With `explore` off the
    /// choice is greedy on [`Agent::evaluate_q`].
    pub fn select_action(
        &mut self,
        obs: &Observation,
        legal: &[bool],
        explore: bool,
    ) -> Result<ActionIndex, AgentError> {
        self.check_obs(obs)?;
        if legal.len() != self.action_size {
            return Err(AgentError::MaskSize {
                expected: self.action_size,
                got: legal.len(),
            });
        }
        let legal_count = legal.iter().filter(|&&l| l).count();
        if legal_count == 0 {
            return Err(AgentError::NoLegalAction);
        }
        if explore && self.epsilon > 0.0 && self.rng.sample_uniform() < self.epsilon {
            let pick = self.rng.sample_index(legal_count);
            let index = legal
                .iter()
                .enumerate()
                .filter(|(_, &l)| l)
                .nth(pick)
                .map(|(i, _)| i)
                .expect("pick < legal_count");
            return Ok(ActionIndex(index));
        }
        let q = if explore {
            let head = &mut self.heads[self.active_head];
            if head.policy.is_noisy() {
                head.policy.resample_noise(&mut self.rng)?;
            }
            head.policy.q_values(obs.as_slice())?
        } else {
            self.evaluate_q(obs)?
        };
        Ok(ActionIndex(
            argmax(&q, Some(legal)).expect("a legal action exists"),
        ))
    }

    /// Stores a transition in replay memory.
    pub fn observe(&mut self, transition: Transition) {
        self.memory.push(transition);
        self.steps += 1;
    }

    /// Whether the step schedule calls for a learn step now.
    pub fn should_learn(&self) -> bool {
        self.steps.is_multiple_of(self.config.learn_every)
            && self.memory.len() >= self.config.batch_size
    }

    fn sample(&mut self, head: usize) -> Result<Batch, ReplayError> {
        let n = self.config.batch_size;
        let beta = self
            .config
            .priority
            .beta_at(self.learn_steps, self.config.beta_anneal_steps);
        let rng = if self.features.bootstrapped {
            &mut self.heads[head].rng
        } else {
            &mut self.rng
        };
        match (self.features.prioritized, self.features.bootstrapped) {
            (true, _) => self.memory.sample_prioritized(n, rng, beta),
            (false, true) => self.memory.sample_bootstrap(n, rng),
            (false, false) => self.memory.sample_uniform(n, rng),
        }
    }

    /// One gradient step per head on a freshly sampled batch. Returns the mean
    /// loss, or `None` while memory holds fewer than `batch_size` transitions.
    pub fn learn_step(&mut self) -> Result<Option<f64>, AgentError> {
        if self.memory.len() < self.config.batch_size {
            return Ok(None);
        }
        let mut total_loss = 0.0;
        for k in 0..self.heads.len() {
            let mut batch = self.sample(k)?;
            if self.config.reward_scale != 1.0 {
                for t in &mut batch.transitions {
                    t.reward *= self.config.reward_scale;
                }
            }
            let gamma = self.config.gamma;
            let kappa = self.config.huber_kappa;
            let prioritized = self.features.prioritized;
            let head = &mut self.heads[k];
            let noisy = head.policy.is_noisy();
            if noisy {
                head.policy.zero_noise()?;
                head.target.zero_noise()?;
            }
            let y = compute_targets(&head.policy, &head.target, &batch.transitions, gamma)?;
            if noisy {
                head.policy.resample_noise(&mut self.rng)?;
            }
            let states: Vec<&[f64]> = batch
                .transitions
                .iter()
                .map(|t| t.state.as_slice())
                .collect();
            let q = head.policy.forward_cached(&Tensor2D::from_rows(&states)?)?;
            let pred: Vec<f64> = batch
                .transitions
                .iter()
                .enumerate()
                .map(|(r, t)| q.get(r, t.action.0))
                .collect();
            let weights = prioritized.then_some(batch.weights.as_slice());
            let (loss, grad) = huber_loss_weighted(&pred, &y, weights, kappa)?;
            let mut grad_out = Tensor2D::zeros(q.rows(), q.cols());
            for (r, t) in batch.transitions.iter().enumerate() {
                grad_out.set(r, t.action.0, grad[r]);
            }
            let grads = head.policy.backward(&grad_out)?;
            head.adam.step(head.policy.parameters_mut(), &grads)?;
            if prioritized {
                let td: Vec<f64> = pred.iter().zip(&y).map(|(p, t)| p - t).collect();
                self.memory.update_priorities(&batch.indices, &td)?;
            }
            total_loss += loss;
        }
        self.learn_steps += 1;
        Ok(Some(total_loss / self.heads.len() as f64))
    }
}
