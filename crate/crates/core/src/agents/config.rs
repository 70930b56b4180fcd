use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::AgentError;
use crate::neural::AdamConfig;
use crate::replay::PriorityConfig;

/// The deep Q-learning variants. All of them use double-Q targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    D2qn,
    D3qn,
    NoisyD3qn,
    PerD3qn,
    BootstrappedD3qn,
    Combined,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::D2qn,
        Variant::D3qn,
        Variant::NoisyD3qn,
        Variant::PerD3qn,
        Variant::BootstrappedD3qn,
        Variant::Combined,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::D2qn => "d2qn",
            Variant::D3qn => "d3qn",
            Variant::NoisyD3qn => "noisy_d3qn",
            Variant::PerD3qn => "per_d3qn",
            Variant::BootstrappedD3qn => "bootstrapped_d3qn",
            Variant::Combined => "combined",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = AgentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| AgentError::UnknownVariant(s.to_string()))
    }
}

/// Independent architecture and sampling toggles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Features {
    pub dueling: bool,
    pub noisy: bool,
    pub prioritized: bool,
    pub bootstrapped: bool,
}

impl Default for Features {
    fn default() -> Self {
        Self {
            dueling: true,
            noisy: true,
            prioritized: true,
            bootstrapped: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub variant: Variant,
    pub gamma: f64,
    pub batch_size: usize,
    /// Environment steps between policy-net updates.
    pub learn_every: u64,
    /// Episodes between hard target-net copies.
    pub target_sync: u64,
    pub epsilon_start: f64,
    pub epsilon_min: f64,
    /// Multiplicative decay per episode.
    pub epsilon_decay: f64,
    /// Ensemble size for bootstrapped agents.
    pub n_heads: usize,
    pub hidden: Vec<usize>,
    pub adam: AdamConfig,
    pub huber_kappa: f64,
    /// Rewards are multiplied by this before forming TD targets.
    pub reward_scale: f64,
    pub memory_capacity: usize,
    pub priority: PriorityConfig,
    /// Steps over which the importance exponent anneals to `beta_end`.
    pub beta_anneal_steps: u64,
    /// Toggles used by the `combined` variant.
    pub combined: Features,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            variant: Variant::D3qn,
            gamma: 0.99,
            batch_size: 64,
            learn_every: 1,
            target_sync: 1,
            epsilon_start: 1.0,
            epsilon_min: 0.01,
            epsilon_decay: 0.97,
            n_heads: 5,
            hidden: vec![48, 48],
            adam: AdamConfig::default(),
            huber_kappa: 1.0,
            reward_scale: 1.0,
            memory_capacity: 50_000,
            priority: PriorityConfig::default(),
            beta_anneal_steps: 36_500,
            combined: Features::default(),
        }
    }
}

impl AgentConfig {
    pub fn for_variant(variant: Variant) -> Self {
        Self {
            variant,
            ..Default::default()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, AgentError> {
        let config: Self =
            toml::from_str(text).map_err(|e| AgentError::InvalidConfig(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, AgentError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| AgentError::InvalidConfig(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            AgentError::InvalidConfig(msg) => {
                AgentError::InvalidConfig(format!("{}: {msg}", path.display()))
            }
            other => other,
        })
    }

    pub fn features(&self) -> Features {
        let plain = Features {
            dueling: true,
            noisy: false,
            prioritized: false,
            bootstrapped: false,
        };
        match self.variant {
            Variant::D2qn => Features {
                dueling: false,
                ..plain
            },
            Variant::D3qn => plain,
            Variant::NoisyD3qn => Features {
                noisy: true,
                ..plain
            },
            Variant::PerD3qn => Features {
                prioritized: true,
                ..plain
            },
            Variant::BootstrappedD3qn => Features {
                bootstrapped: true,
                ..plain
            },
            Variant::Combined => self.combined,
        }
    }

    pub fn heads(&self) -> usize {
        if self.features().bootstrapped {
            self.n_heads
        } else {
            1
        }
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |msg: String| Err(AgentError::InvalidConfig(msg));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma must be in [0, 1], got {}", self.gamma));
        }
        if !(0.0 <= self.epsilon_min
            && self.epsilon_min <= self.epsilon_start
            && self.epsilon_start <= 1.0)
        {
            return bad(format!(
                "need 0 <= epsilon_min ({}) <= epsilon_start ({}) <= 1",
                self.epsilon_min, self.epsilon_start
            ));
        }
        if !(self.epsilon_decay > 0.0 && self.epsilon_decay <= 1.0) {
            return bad(format!(
                "epsilon_decay must be in (0, 1], got {}",
                self.epsilon_decay
            ));
        }
        if self.batch_size == 0 || self.learn_every == 0 || self.target_sync == 0 {
            return bad("batch_size, learn_every and target_sync must be positive".into());
        }
        if self.memory_capacity == 0 {
            return bad("memory_capacity must be positive".into());
        }
        if self.features().bootstrapped && self.n_heads == 0 {
            return bad("n_heads must be positive".into());
        }
        if self.adam.learning_rate.is_nan()
            || self.adam.learning_rate <= 0.0
            || self.huber_kappa.is_nan()
            || self.huber_kappa <= 0.0
        {
            return bad("learning_rate and huber_kappa must be positive".into());
        }
        Ok(())
    }
}

/// `max(epsilon_min, epsilon_start * epsilon_decay^episode)`, or 0 when noisy
/// layers provide the exploration.
pub fn epsilon_at(config: &AgentConfig, episode: u64) -> f64 {
    if config.features().noisy {
        return 0.0;
    }
    let decayed = config.epsilon_start * config.epsilon_decay.powf(episode as f64);
    decayed.max(config.epsilon_min)
}
