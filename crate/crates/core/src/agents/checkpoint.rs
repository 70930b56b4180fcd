//! Agent checkpoints: a `meta.json` plus one weight file per policy and
//! target network. Replay memory and optimiser moments are not saved.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Agent, AgentConfig, AgentError, QHead};
use crate::des::RngStream;
use crate::neural::{load_weights, save_weights, NeuralError, QNetwork};

/// Version tag written into `meta.json`.
pub const AGENT_FORMAT: &str = "bedwarden-agent-1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentMeta {
    pub format: String,
    pub config: AgentConfig,
    pub observation_size: usize,
    pub action_size: usize,
    pub seed: u64,
    pub episodes_begun: u64,
    pub steps: u64,
    pub learn_steps: u64,
}

fn ck_err(path: &Path, message: impl Into<String>) -> AgentError {
    AgentError::Checkpoint {
        path: path.display().to_string(),
        message: message.into(),
    }
}

impl Agent {
    pub fn meta(&self) -> AgentMeta {
        AgentMeta {
            format: AGENT_FORMAT.to_string(),
            config: self.config.clone(),
            observation_size: self.observation_size,
            action_size: self.action_size,
            seed: self.seed,
            episodes_begun: self.episodes_begun,
            steps: self.steps,
            learn_steps: self.learn_steps,
        }
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), AgentError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| ck_err(dir, e.to_string()))?;
        let meta_path = dir.join("meta.json");
        let text = serde_json::to_string_pretty(&self.meta()).expect("meta serialises");
        fs::write(&meta_path, text).map_err(|e| ck_err(&meta_path, e.to_string()))?;
        for (k, head) in self.heads.iter().enumerate() {
            save_weights(&head.policy, dir.join(format!("policy_{k}.json")))?;
            save_weights(&head.target, dir.join(format!("target_{k}.json")))?;
        }
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self, AgentError> {
        let dir = dir.as_ref();
        let meta_path = dir.join("meta.json");
        let text = fs::read_to_string(&meta_path).map_err(|e| ck_err(&meta_path, e.to_string()))?;
        let meta: AgentMeta =
            serde_json::from_str(&text).map_err(|e| ck_err(&meta_path, e.to_string()))?;
        if meta.format != AGENT_FORMAT {
            return Err(ck_err(
                &meta_path,
                format!(
                    "unsupported format {:?}, expected {AGENT_FORMAT:?}",
                    meta.format
                ),
            ));
        }
        meta.config.validate()?;
        let expected = Agent::new(
            meta.config.clone(),
            meta.observation_size,
            meta.action_size,
            meta.seed,
        )?;
        let arch = expected.heads[0].policy.arch().clone();
        let load = |name: String| -> Result<QNetwork, AgentError> {
            let path = dir.join(&name);
            let net = load_weights(&path)?;
            if net.arch() != &arch {
                return Err(NeuralError::ArchitectureMismatch(format!(
                    "{name} does not match the configured agent"
                ))
                .into());
            }
            Ok(net)
        };
        let mut heads = Vec::with_capacity(meta.config.heads());
        for k in 0..meta.config.heads() {
            let mut head = QHead::new(
                load(format!("policy_{k}.json"))?,
                &meta.config,
                RngStream::with_stream(meta.seed, 1 + k as u64),
            );
            head.target = load(format!("target_{k}.json"))?;
            heads.push(head);
        }
        let mut agent = Agent::assemble(
            meta.config,
            meta.observation_size,
            meta.action_size,
            meta.seed,
            heads,
            RngStream::with_stream(meta.seed, 0),
        );
        agent.episodes_begun = meta.episodes_begun;
        agent.steps = meta.steps;
        agent.learn_steps = meta.learn_steps;
        agent.epsilon = super::epsilon_at(&agent.config, meta.episodes_begun.saturating_sub(1));
        Ok(agent)
    }
}
