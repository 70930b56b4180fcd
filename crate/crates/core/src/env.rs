//! Gym-style environment contract shared by every simulation in the crate.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Fixed-length feature vector handed to the agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Observation(pub Vec<f64>);

impl Observation {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// Index into the environment's action list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionIndex(pub usize);

impl fmt::Display for ActionIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InfoValue {
    Number(f64),
    Text(String),
}

pub type Info = BTreeMap<String, InfoValue>;

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub terminal: bool,
    pub info: Info,
}

/// Action and observation sizes. `actions` holds the signed bed deltas for the
/// hospital environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub action_size: usize,
    pub observation_size: usize,
    pub actions: Vec<i64>,
}

impl EnvSpec {
    pub fn new(actions: Vec<i64>, observation_size: usize) -> Self {
        Self {
            action_size: actions.len(),
            observation_size,
            actions,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("action index {index} out of range (action_size {action_size})")]
    ActionOutOfRange { index: usize, action_size: usize },
    #[error("illegal action: delta {delta} with beds {beds} and pending {pending} would leave {} staffed beds", beds + pending + delta)]
    IllegalAction { delta: i64, beds: i64, pending: i64 },
    #[error("episode is terminal; call reset before stepping")]
    Terminal,
    #[error("environment has not been reset")]
    NotReset,
    #[error("simulation kernel error: {0}")]
    Kernel(#[from] crate::des::DesError),
}

/// The reset/step/render contract.
pub trait Environment {
    fn spec(&self) -> &EnvSpec;

    /// Starts a fresh episode. `Some(seed)` re-seeds the environment's random
    /// stream; `None` continues it.
    fn reset(&mut self, seed: Option<u64>) -> Observation;

    fn step(&mut self, action: ActionIndex) -> Result<StepResult, EnvError>;

    fn render(&self) -> String;

    /// Whether `action` may be passed to `step` in the current state.
    fn is_legal(&self, action: ActionIndex) -> bool;

    fn legal_mask(&self) -> Vec<bool> {
        (0..self.spec().action_size)
            .map(|i| self.is_legal(ActionIndex(i)))
            .collect()
    }
}

impl<E: Environment + ?Sized> Environment for Box<E> {
    fn spec(&self) -> &EnvSpec {
        (**self).spec()
    }

    fn reset(&mut self, seed: Option<u64>) -> Observation {
        (**self).reset(seed)
    }

    fn step(&mut self, action: ActionIndex) -> Result<StepResult, EnvError> {
        (**self).step(action)
    }

    fn render(&self) -> String {
        (**self).render()
    }

    fn is_legal(&self, action: ActionIndex) -> bool {
        (**self).is_legal(action)
    }
}
