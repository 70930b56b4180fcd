//! Training and evaluation harness: the episode/step loop, baseline policies,
//! and CSV output of per-episode metrics and per-step traces.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{Agent, AgentConfig, AgentError};
use crate::des::RngStream;
use crate::env::{ActionIndex, EnvError, Environment, Observation};
use crate::hospital::{is_legal, ConfigError, HospitalConfig, HospitalEnv, HospitalState};
use crate::replay::Transition;

pub const METRICS_FILE: &str = "metrics.csv";
pub const TRACE_FILE: &str = "trace.csv";
/// Every episode's trace, written only when full tracing is on.
pub const FULL_TRACE_FILE: &str = "trace_all.csv";
pub const CHECKPOINT_DIR: &str = "checkpoint";

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error("episode {episode}, step {step}: {source}")]
    Env {
        episode: u64,
        step: u64,
        #[source]
        source: EnvError,
    },
    #[error("episode {episode}, step {step}: {source}")]
    Step {
        episode: u64,
        step: u64,
        #[source]
        source: AgentError,
    },
    #[error("checkpoint expects observations of length {agent}, environment produces {env}")]
    ObservationMismatch { agent: usize, env: usize },
    #[error("checkpoint has {agent} actions, environment has {env}")]
    ActionMismatch { agent: usize, env: usize },
    #[error("episodes must be at least 1")]
    NoEpisodes,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub episodes: u64,
    pub env: HospitalConfig,
    pub agent: AgentConfig,
    /// Episode `e` resets the environment with seed `env_seed_base + e`.
    pub env_seed_base: u64,
    pub agent_seed: u64,
    /// Log render lines on every step of every n-th episode.
    pub render_every: Option<u64>,
    pub out_dir: Option<PathBuf>,
    /// Keep the trace of every episode, not only the last.
    pub full_trace: bool,
    /// Write 0 in the `seconds` column so output files are byte-reproducible.
    pub zero_timing: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 100,
            env: HospitalConfig::default(),
            agent: AgentConfig::default(),
            env_seed_base: 0,
            agent_seed: 0,
            render_every: None,
            out_dir: None,
            full_trace: false,
            zero_timing: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub episode: u64,
    pub epsilon: f64,
    pub mean_reward: f64,
    pub total_reward: f64,
    pub final_beds: i64,
    pub final_patients: i64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub day: f64,
    pub weekday: u8,
    pub beds: i64,
    pub patients: i64,
    pub spare_beds: i64,
    pub pending_bed_change: i64,
    pub action_delta: i64,
    pub reward: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub metrics: Vec<EpisodeMetrics>,
    /// Trace of the last episode.
    pub trace: Vec<TraceRecord>,
    /// Traces of all episodes when full tracing is on, else empty.
    pub all_traces: Vec<Vec<TraceRecord>>,
    pub agent: Agent,
}

/// Baseline policies used as yardsticks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselinePolicy {
    RandomLegal,
    AlwaysZero,
    RuleBased,
}

impl BaselinePolicy {
    pub const ALL: [BaselinePolicy; 3] = [
        BaselinePolicy::RandomLegal,
        BaselinePolicy::AlwaysZero,
        BaselinePolicy::RuleBased,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BaselinePolicy::RandomLegal => "random_legal",
            BaselinePolicy::AlwaysZero => "always_zero",
            BaselinePolicy::RuleBased => "rule_based",
        }
    }
}

impl fmt::Display for BaselinePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error)]
#[error("unknown baseline policy {0:?} (valid: random_legal, always_zero, rule_based)")]
pub struct UnknownBaseline(pub String);

impl FromStr for BaselinePolicy {
    type Err = UnknownBaseline;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BaselinePolicy::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| UnknownBaseline(s.to_string()))
    }
}

/// Legal delta closest to `patients * (1 + target_reserve) - beds - pending`.
/// Ties go to the smaller magnitude, then the smaller delta.
pub fn rule_based_delta(state: &HospitalState, config: &HospitalConfig) -> i64 {
    let desired = state.patients as f64 * (1.0 + config.target_reserve)
        - state.beds as f64
        - state.pending_bed_change as f64;
    config
        .action_deltas
        .iter()
        .copied()
        .filter(|&d| is_legal(state, d))
        .min_by(|&a, &b| {
            let da = (a as f64 - desired).abs();
            let db = (b as f64 - desired).abs();
            da.total_cmp(&db)
                .then(a.abs().cmp(&b.abs()))
                .then(a.cmp(&b))
        })
        .expect("delta 0 is always legal")
}

fn uniform_legal(mask: &[bool], rng: &mut RngStream) -> ActionIndex {
    let legal: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
    ActionIndex(legal[rng.sample_index(legal.len())])
}

struct EpisodeRun {
    metrics: EpisodeMetrics,
    trace: Vec<TraceRecord>,
}

/// Runs one episode with `choose` picking actions. `on_step` sees each
/// transition as it happens.
fn run_episode<C, S>(
    env: &mut HospitalEnv,
    episode: u64,
    seed: u64,
    epsilon: f64,
    zero_timing: bool,
    mut choose: C,
    mut on_step: S,
) -> Result<EpisodeRun, TrainError>
where
    C: FnMut(&HospitalEnv, &Observation) -> Result<ActionIndex, AgentError>,
    S: FnMut(Transition) -> Result<(), AgentError>,
{
    let start = Instant::now();
    let mut obs = env.reset(Some(seed));
    let mut trace = Vec::with_capacity(env.config().steps_per_episode() as usize);
    let mut total = 0.0;
    loop {
        let step = env.steps_taken();
        let action = choose(env, &obs).map_err(|source| TrainError::Step {
            episode,
            step,
            source,
        })?;
        let delta = env.delta_of(action).unwrap_or(0);
        let result = env.step(action).map_err(|source| TrainError::Env {
            episode,
            step,
            source,
        })?;
        let s = env.state();
        trace.push(TraceRecord {
            day: env.now().days(),
            weekday: s.weekday,
            beds: s.beds,
            patients: s.patients,
            spare_beds: s.spare_beds,
            pending_bed_change: s.pending_bed_change,
            action_delta: delta,
            reward: result.reward,
        });
        total += result.reward;
        let terminal = result.terminal;
        let next = result.observation;
        on_step(Transition {
            state: obs,
            action,
            reward: result.reward,
            next_state: next.clone(),
            terminal,
        })
        .map_err(|source| TrainError::Step {
            episode,
            step,
            source,
        })?;
        obs = next;
        if terminal {
            break;
        }
    }
    let s = env.state();
    let seconds = if zero_timing {
        0.0
    } else {
        start.elapsed().as_secs_f64()
    };
    Ok(EpisodeRun {
        metrics: EpisodeMetrics {
            episode,
            epsilon,
            mean_reward: total / trace.len() as f64,
            total_reward: total,
            final_beds: s.beds,
            final_patients: s.patients,
            seconds,
        },
        trace,
    })
}

/// Trains a fresh agent. Writes metrics, trace and checkpoint when
/// `out_dir` is set.
pub fn train(config: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    if config.episodes == 0 {
        return Err(TrainError::NoEpisodes);
    }
    let mut env = HospitalEnv::new(config.env.clone(), config.env_seed_base)?;
    let spec = env.spec().clone();
    let mut agent = Agent::new(
        config.agent.clone(),
        spec.observation_size,
        spec.action_size,
        config.agent_seed,
    )?;
    let mut metrics = Vec::with_capacity(config.episodes as usize);
    let mut all_traces = Vec::new();
    let mut trace = Vec::new();
    for episode in 0..config.episodes {
        let render = config
            .render_every
            .is_some_and(|n| n > 0 && episode % n == 0);
        env.set_render_on_step(render);
        agent.begin_episode();
        let epsilon = agent.epsilon();
        let agent_cell = std::cell::RefCell::new(&mut agent);
        let run = run_episode(
            &mut env,
            episode,
            config.env_seed_base.wrapping_add(episode),
            epsilon,
            config.zero_timing,
            |env, obs| {
                agent_cell
                    .borrow_mut()
                    .select_action(obs, &env.legal_mask(), true)
            },
            |t| {
                let mut agent = agent_cell.borrow_mut();
                agent.observe(t);
                if agent.should_learn() {
                    agent.learn_step()?;
                }
                Ok(())
            },
        )?;
        agent.end_episode()?;
        log::debug!(
            "episode {episode}: epsilon={epsilon:.4} mean_reward={:.3}",
            run.metrics.mean_reward
        );
        metrics.push(run.metrics);
        if config.full_trace {
            all_traces.push(run.trace.clone());
        }
        trace = run.trace;
    }
    if let Some(dir) = &config.out_dir {
        write_metrics(&metrics, &trace, dir)?;
        if config.full_trace {
            write_full_trace(&all_traces, dir)?;
        }
        agent.save(dir.join(CHECKPOINT_DIR))?;
    }
    Ok(TrainOutcome {
        metrics,
        trace,
        all_traces,
        agent,
    })
}

/// Greedy rollouts of a saved agent: no exploration, noise off, ensemble
/// mean, no learning.
pub fn evaluate(
    checkpoint: impl AsRef<Path>,
    env_config: &HospitalConfig,
    episodes: u64,
    seed: u64,
) -> Result<(Vec<EpisodeMetrics>, Vec<TraceRecord>), TrainError> {
    let mut agent = Agent::load(checkpoint)?;
    evaluate_agent(&mut agent, env_config, episodes, seed, true)
}

/// Greedy rollouts of an in-memory agent. See [`evaluate`].
pub fn evaluate_agent(
    agent: &mut Agent,
    env_config: &HospitalConfig,
    episodes: u64,
    seed: u64,
    zero_timing: bool,
) -> Result<(Vec<EpisodeMetrics>, Vec<TraceRecord>), TrainError> {
    if episodes == 0 {
        return Err(TrainError::NoEpisodes);
    }
    let mut env = HospitalEnv::new(env_config.clone(), seed)?;
    let spec = env.spec().clone();
    if agent.observation_size() != spec.observation_size {
        return Err(TrainError::ObservationMismatch {
            agent: agent.observation_size(),
            env: spec.observation_size,
        });
    }
    if agent.action_size() != spec.action_size {
        return Err(TrainError::ActionMismatch {
            agent: agent.action_size(),
            env: spec.action_size,
        });
    }
    let mut metrics = Vec::new();
    let mut trace = Vec::new();
    for episode in 0..episodes {
        let run = run_episode(
            &mut env,
            episode,
            seed.wrapping_add(episode),
            0.0,
            zero_timing,
            |env, obs| agent.select_action(obs, &env.legal_mask(), false),
            |_| Ok(()),
        )?;
        metrics.push(run.metrics);
        trace = run.trace;
    }
    Ok((metrics, trace))
}

/// Runs a fixed policy. Episode `e` uses environment seed `seed + e`.
pub fn run_baseline(
    policy: BaselinePolicy,
    env_config: &HospitalConfig,
    episodes: u64,
    seed: u64,
    zero_timing: bool,
) -> Result<(Vec<EpisodeMetrics>, Vec<TraceRecord>), TrainError> {
    if episodes == 0 {
        return Err(TrainError::NoEpisodes);
    }
    let mut env = HospitalEnv::new(env_config.clone(), seed)?;
    let zero = env.index_of_delta(0).expect("validated config contains 0");
    let mut rng = RngStream::with_stream(seed, 1);
    let mut metrics = Vec::new();
    let mut trace = Vec::new();
    for episode in 0..episodes {
        let run = run_episode(
            &mut env,
            episode,
            seed.wrapping_add(episode),
            0.0,
            zero_timing,
            |env, _| {
                Ok(match policy {
                    BaselinePolicy::RandomLegal => uniform_legal(&env.legal_mask(), &mut rng),
                    BaselinePolicy::AlwaysZero => zero,
                    BaselinePolicy::RuleBased => env
                        .index_of_delta(rule_based_delta(env.state(), env.config()))
                        .expect("delta comes from the action list"),
                })
            },
            |_| Ok(()),
        )?;
        metrics.push(run.metrics);
        trace = run.trace;
    }
    Ok((metrics, trace))
}

fn write_csv<T: Serialize>(
    path: &Path,
    rows: impl IntoIterator<Item = T>,
    header: &[&str],
) -> Result<(), TrainError> {
    let csv_err = |source| TrainError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush().map_err(|source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub const METRICS_COLUMNS: [&str; 7] = [
    "episode",
    "epsilon",
    "mean_reward",
    "total_reward",
    "final_beds",
    "final_patients",
    "seconds",
];

pub const TRACE_COLUMNS: [&str; 8] = [
    "day",
    "weekday",
    "beds",
    "patients",
    "spare_beds",
    "pending_bed_change",
    "action_delta",
    "reward",
];

fn ensure_dir(dir: &Path) -> Result<(), TrainError> {
    fs::create_dir_all(dir).map_err(|source| TrainError::Io {
        path: dir.to_path_buf(),
        source,
    })
}

/// Writes `metrics.csv` and `trace.csv` into `out_dir`.
pub fn write_metrics(
    metrics: &[EpisodeMetrics],
    trace: &[TraceRecord],
    out_dir: impl AsRef<Path>,
) -> Result<(), TrainError> {
    let dir = out_dir.as_ref();
    ensure_dir(dir)?;
    write_csv(&dir.join(METRICS_FILE), metrics, &METRICS_COLUMNS)?;
    write_csv(&dir.join(TRACE_FILE), trace, &TRACE_COLUMNS)
}

fn write_full_trace(traces: &[Vec<TraceRecord>], dir: &Path) -> Result<(), TrainError> {
    let mut header = vec!["episode"];
    header.extend(TRACE_COLUMNS);
    let path = dir.join(FULL_TRACE_FILE);
    let csv_err = |source| TrainError::Csv {
        path: path.clone(),
        source,
    };
    let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
    w.write_record(&header).map_err(csv_err)?;
    for (episode, r) in traces
        .iter()
        .enumerate()
        .flat_map(|(e, t)| t.iter().map(move |r| (e, r)))
    {
        w.write_record([
            episode.to_string(),
            r.day.to_string(),
            r.weekday.to_string(),
            r.beds.to_string(),
            r.patients.to_string(),
            r.spare_beds.to_string(),
            r.pending_bed_change.to_string(),
            r.action_delta.to_string(),
            r.reward.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|source| TrainError::Io { path, source })
}

pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<EpisodeMetrics>, TrainError> {
    read_csv(path.as_ref())
}

pub fn read_trace(path: impl AsRef<Path>) -> Result<Vec<TraceRecord>, TrainError> {
    read_csv(path.as_ref())
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, TrainError> {
    let csv_err = |source| TrainError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}

/// Mean of `mean_reward` over a slice of episodes.
pub fn mean_of_means(metrics: &[EpisodeMetrics]) -> f64 {
    metrics.iter().map(|m| m.mean_reward).sum::<f64>() / metrics.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::Variant;
    use crate::hospital::calculate_reward;

    fn small_env() -> HospitalConfig {
        HospitalConfig {
            sim_duration: 5.0,
            arrivals_per_day: 20.0,
            los: 3.0,
            ..Default::default()
        }
    }

    #[test]
    fn five_day_episode_pushes_five_transitions() {
        let cfg = TrainConfig {
            episodes: 1,
            env: small_env(),
            agent: AgentConfig {
                hidden: vec![8],
                ..AgentConfig::for_variant(Variant::D3qn)
            },
            ..Default::default()
        };
        let out = train(&cfg).unwrap();
        assert_eq!(out.agent.memory().len(), 5);
        assert_eq!(out.metrics.len(), 1);
        assert_eq!(out.trace.len(), 5);
    }

    #[test]
    fn memory_grows_across_episodes() {
        let cfg = TrainConfig {
            episodes: 3,
            env: small_env(),
            agent: AgentConfig {
                hidden: vec![8],
                batch_size: 4,
                ..Default::default()
            },
            ..Default::default()
        };
        let out = train(&cfg).unwrap();
        assert_eq!(out.agent.memory().len(), 15);
        assert_eq!(out.agent.episodes_begun(), 3);
    }

    #[test]
    fn rule_based_example() {
        let cfg = HospitalConfig::default();
        let state = HospitalState {
            weekday: 0,
            beds: 340,
            patients: 350,
            spare_beds: -10,
            pending_bed_change: 0,
        };
        assert_eq!(rule_based_delta(&state, &cfg), 10);
        let balanced = HospitalState {
            beds: 367,
            spare_beds: 17,
            ..state
        };
        assert_eq!(rule_based_delta(&balanced, &cfg), 0);
        let low = HospitalState {
            beds: 3,
            patients: 0,
            spare_beds: 3,
            ..state
        };
        assert_eq!(rule_based_delta(&low, &cfg), -2);
    }

    #[test]
    fn always_zero_keeps_beds() {
        let (_, trace) = run_baseline(
            BaselinePolicy::AlwaysZero,
            &HospitalConfig::default(),
            1,
            3,
            true,
        )
        .unwrap();
        assert_eq!(trace.len(), 365);
        assert!(trace
            .iter()
            .all(|r| r.beds == 350 && r.pending_bed_change == 0));
    }

    #[test]
    fn trace_rewards_match_state() {
        let cfg = HospitalConfig::default();
        let (_, trace) = run_baseline(BaselinePolicy::RuleBased, &cfg, 1, 5, true).unwrap();
        for r in &trace {
            let s = HospitalState {
                weekday: r.weekday,
                beds: r.beds,
                patients: r.patients,
                spare_beds: r.spare_beds,
                pending_bed_change: r.pending_bed_change,
            };
            assert_eq!(r.reward, calculate_reward(&s, &cfg));
        }
    }

    #[test]
    fn baseline_names_parse() {
        for p in BaselinePolicy::ALL {
            assert_eq!(p.name().parse::<BaselinePolicy>().unwrap(), p);
        }
        assert!("nope".parse::<BaselinePolicy>().is_err());
    }
}
