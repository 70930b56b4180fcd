//! Hospital bed-capacity simulation.
//!
//! Patients arrive with exponential inter-arrival times whose mean depends on
//! the day of week, stay for an exponential length of stay, and leave. The
//! agent requests changes to the number of staffed beds; each request is
//! enacted `delay_to_change_beds` days later. The reward penalises the distance
//! between spare beds and a target reserve proportional to current patients.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::des::{Event, EventQueue, RngStream, SimTime};
use crate::env::{
    ActionIndex, EnvError, EnvSpec, Environment, Info, InfoValue, Observation, StepResult,
};

const WEEKDAY_FACTOR: f64 = 1.2;
const WEEKEND_FACTOR: f64 = 0.5;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to parse config {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid hospital config: {0}")]
    Invalid(String),
}

fn default_arrivals_per_day() -> f64 {
    50.0
}
fn default_los() -> f64 {
    7.0
}
fn default_sim_duration() -> f64 {
    365.0
}
fn default_time_step() -> f64 {
    1.0
}
fn default_delay_to_change_beds() -> f64 {
    2.0
}
fn default_target_reserve() -> f64 {
    0.05
}
fn default_action_deltas() -> Vec<i64> {
    vec![-10, -5, -2, -1, 0, 1, 2, 5, 10]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HospitalConfig {
    #[serde(default = "default_arrivals_per_day")]
    pub arrivals_per_day: f64,
    /// Mean length of stay in days.
    #[serde(default = "default_los")]
    pub los: f64,
    #[serde(default = "default_sim_duration")]
    pub sim_duration: f64,
    #[serde(default = "default_time_step")]
    pub time_step: f64,
    #[serde(default = "default_delay_to_change_beds")]
    pub delay_to_change_beds: f64,
    /// Target spare beds as a fraction of current patients.
    #[serde(default = "default_target_reserve")]
    pub target_reserve: f64,
    #[serde(default = "default_action_deltas")]
    pub action_deltas: Vec<i64>,
    /// Encode the weekday as seven one-hot features instead of `weekday / 6`.
    #[serde(default)]
    pub weekday_one_hot: bool,
}

impl Default for HospitalConfig {
    fn default() -> Self {
        Self {
            arrivals_per_day: default_arrivals_per_day(),
            los: default_los(),
            sim_duration: default_sim_duration(),
            time_step: default_time_step(),
            delay_to_change_beds: default_delay_to_change_beds(),
            target_reserve: default_target_reserve(),
            action_deltas: default_action_deltas(),
            weekday_one_hot: false,
        }
    }
}

impl HospitalConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: "<string>".into(),
            message: e.message().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let cfg: Self = toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.display().to_string(),
            message: e.message().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("arrivals_per_day", self.arrivals_per_day),
            ("los", self.los),
            ("sim_duration", self.sim_duration),
            ("time_step", self.time_step),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ConfigError::Invalid(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if !(self.delay_to_change_beds >= 0.0 && self.delay_to_change_beds.is_finite()) {
            return Err(ConfigError::Invalid(format!(
                "delay_to_change_beds must be non-negative, got {}",
                self.delay_to_change_beds
            )));
        }
        if !(0.0..1.0).contains(&self.target_reserve) {
            return Err(ConfigError::Invalid(format!(
                "target_reserve must be in [0, 1), got {}",
                self.target_reserve
            )));
        }
        if !self.action_deltas.contains(&0) {
            return Err(ConfigError::Invalid("action_deltas must contain 0".into()));
        }
        let mut sorted = self.action_deltas.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.action_deltas.len() {
            return Err(ConfigError::Invalid("action_deltas must not repeat".into()));
        }
        let ratio = self.sim_duration / self.time_step;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) {
            return Err(ConfigError::Invalid(format!(
                "sim_duration {} is not an integer multiple of time_step {}",
                self.sim_duration, self.time_step
            )));
        }
        Ok(())
    }

    /// Number of steps between reset and terminal.
    pub fn steps_per_episode(&self) -> u64 {
        (self.sim_duration / self.time_step - 1e-9).ceil() as u64
    }

    /// Steady-state occupancy, used to scale observations.
    pub fn occupancy_scale(&self) -> f64 {
        self.arrivals_per_day * self.los
    }

    pub fn initial_patients(&self) -> i64 {
        (self.arrivals_per_day * self.los).round_ties_even() as i64
    }

    /// Mean arrivals per day on the given weekday.
    pub fn arrival_rate(&self, weekday: u8) -> f64 {
        if weekday < 5 {
            self.arrivals_per_day * WEEKDAY_FACTOR
        } else {
            self.arrivals_per_day * WEEKEND_FACTOR
        }
    }

    pub fn observation_size(&self) -> usize {
        if self.weekday_one_hot {
            11
        } else {
            5
        }
    }
}

/// The simulation state dictionary.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HospitalState {
    pub weekday: u8,
    pub beds: i64,
    pub patients: i64,
    pub spare_beds: i64,
    pub pending_bed_change: i64,
}

impl HospitalState {
    fn recompute_spare(&mut self) {
        self.spare_beds = self.beds - self.patients;
    }
}

/// `target_reserve * patients`, unrounded.
pub fn target_spare_beds(state: &HospitalState, config: &HospitalConfig) -> f64 {
    config.target_reserve * state.patients as f64
}

pub fn calculate_reward(state: &HospitalState, config: &HospitalConfig) -> f64 {
    -(state.spare_beds as f64 - target_spare_beds(state, config)).abs()
}

pub fn get_observations(state: &HospitalState, config: &HospitalConfig) -> Observation {
    let scale = config.occupancy_scale();
    let mut obs = Vec::with_capacity(config.observation_size());
    if config.weekday_one_hot {
        obs.extend((0..7).map(|d| if d == state.weekday { 1.0 } else { 0.0 }));
    } else {
        obs.push(state.weekday as f64 / 6.0);
    }
    obs.extend([
        state.beds as f64 / scale,
        state.patients as f64 / scale,
        state.spare_beds as f64 / scale,
        state.pending_bed_change as f64 / scale,
    ]);
    Observation(obs)
}

/// A request is legal when the committed bed count stays non-negative.
pub fn is_legal(state: &HospitalState, delta: i64) -> bool {
    state.beds + state.pending_bed_change + delta >= 0
}

pub fn adjust_pending_bed_change(state: &mut HospitalState, delta: i64) {
    state.pending_bed_change += delta;
}

/// Enacts a previously requested change. Returns the part of `delta` that
/// could not be applied because beds would have gone negative; that remainder
/// is dropped from the pending total.
pub fn adjust_bed_numbers(state: &mut HospitalState, delta: i64) -> i64 {
    let wanted = state.beds + delta;
    let discarded = if wanted < 0 { wanted } else { 0 };
    state.beds = wanted.max(0);
    state.pending_bed_change -= delta;
    state.recompute_spare();
    discarded
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum HospitalEvent {
    Arrival,
    Discharge,
    BedChange(i64),
}

/// Running totals over an episode.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EpisodeLedger {
    pub requested: i64,
    pub enacted: i64,
    /// Requested change dropped by enactment-time clamping.
    pub discarded: i64,
    pub arrivals_by_weekday: [u64; 7],
    pub discharges: u64,
}

type EventObserver = Box<dyn FnMut(SimTime, &HospitalState) + Send>;

struct SimCore {
    state: HospitalState,
    rng: RngStream,
    ledger: EpisodeLedger,
    clamped_this_step: i64,
}

impl SimCore {
    fn fire(
        &mut self,
        config: &HospitalConfig,
        queue: &mut EventQueue<HospitalEvent>,
        ev: Event<HospitalEvent>,
    ) {
        let now = ev.fire_time;
        self.state.weekday = now.weekday();
        match ev.payload {
            HospitalEvent::Arrival => {
                self.ledger.arrivals_by_weekday[self.state.weekday as usize] += 1;
                self.admit(config, queue, false);
                let rate = config.arrival_rate(self.state.weekday);
                let gap = self
                    .rng
                    .sample_exponential(1.0 / rate)
                    .expect("validated arrival rate");
                queue
                    .schedule(gap, HospitalEvent::Arrival)
                    .expect("non-negative gap");
            }
            HospitalEvent::Discharge => {
                self.state.patients -= 1;
                self.state.recompute_spare();
                self.ledger.discharges += 1;
            }
            HospitalEvent::BedChange(delta) => {
                let discarded = adjust_bed_numbers(&mut self.state, delta);
                self.ledger.enacted += delta - discarded;
                self.ledger.discarded += discarded;
                self.clamped_this_step += discarded;
            }
        }
    }

    /// Starts one patient spell. Initial-load patients have already completed a
    /// uniform fraction of their stay.
    fn admit(
        &mut self,
        config: &HospitalConfig,
        queue: &mut EventQueue<HospitalEvent>,
        initial_load: bool,
    ) {
        self.state.patients += 1;
        self.state.recompute_spare();
        let mut stay = self
            .rng
            .sample_exponential(config.los)
            .expect("validated los");
        if initial_load {
            stay *= self.rng.sample_uniform();
        }
        queue
            .schedule(stay, HospitalEvent::Discharge)
            .expect("non-negative stay");
    }
}

/// The hospital bed simulation behind the [`Environment`] contract.
pub struct HospitalEnv {
    config: HospitalConfig,
    spec: EnvSpec,
    queue: EventQueue<HospitalEvent>,
    core: SimCore,
    steps_taken: u64,
    steps_per_episode: u64,
    started: bool,
    terminal: bool,
    render_on_step: bool,
    observer: Option<EventObserver>,
}

impl fmt::Debug for HospitalEnv {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HospitalEnv")
            .field("config", &self.config)
            .field("now", &self.queue.now())
            .field("state", &self.core.state)
            .field("steps_taken", &self.steps_taken)
            .field("terminal", &self.terminal)
            .finish()
    }
}

impl HospitalEnv {
    pub fn new(config: HospitalConfig, seed: u64) -> Result<Self, ConfigError> {
        config.validate()?;
        let spec = EnvSpec::new(config.action_deltas.clone(), config.observation_size());
        let steps_per_episode = config.steps_per_episode();
        Ok(Self {
            config,
            spec,
            queue: EventQueue::new(),
            core: SimCore {
                state: HospitalState::default(),
                rng: RngStream::new(seed),
                ledger: EpisodeLedger::default(),
                clamped_this_step: 0,
            },
            steps_taken: 0,
            steps_per_episode,
            started: false,
            terminal: false,
            render_on_step: false,
            observer: None,
        })
    }

    pub fn config(&self) -> &HospitalConfig {
        &self.config
    }

    pub fn state(&self) -> &HospitalState {
        &self.core.state
    }

    pub fn now(&self) -> SimTime {
        self.queue.now()
    }

    pub fn ledger(&self) -> &EpisodeLedger {
        &self.core.ledger
    }

    pub fn steps_taken(&self) -> u64 {
        self.steps_taken
    }

    pub fn is_terminal(&self) -> bool {
        self.terminal
    }

    /// Log a render line after every step.
    pub fn set_render_on_step(&mut self, on: bool) {
        self.render_on_step = on;
    }

    /// Installs a hook called after every fired event with the post-event state.
    pub fn set_event_observer<F>(&mut self, observer: F)
    where
        F: FnMut(SimTime, &HospitalState) + Send + 'static,
    {
        self.observer = Some(Box::new(observer));
    }

    pub fn delta_of(&self, action: ActionIndex) -> Option<i64> {
        self.config.action_deltas.get(action.0).copied()
    }

    pub fn index_of_delta(&self, delta: i64) -> Option<ActionIndex> {
        self.config
            .action_deltas
            .iter()
            .position(|&d| d == delta)
            .map(ActionIndex)
    }

    fn load_patients(&mut self) {
        for _ in 0..self.config.initial_patients() {
            self.core.state.beds += 1;
            self.core.admit(&self.config, &mut self.queue, true);
        }
    }
}

impl Environment for HospitalEnv {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: Option<u64>) -> Observation {
        if let Some(seed) = seed {
            self.core.rng = RngStream::new(seed);
        }
        self.queue = EventQueue::new();
        self.queue
            .schedule(0.0, HospitalEvent::Arrival)
            .expect("zero delay");
        self.core.state = HospitalState::default();
        self.core.ledger = EpisodeLedger::default();
        self.load_patients();
        self.steps_taken = 0;
        self.started = true;
        self.terminal = false;
        get_observations(&self.core.state, &self.config)
    }

    fn step(&mut self, action: ActionIndex) -> Result<StepResult, EnvError> {
        if !self.started {
            return Err(EnvError::NotReset);
        }
        if self.terminal {
            return Err(EnvError::Terminal);
        }
        let delta = self.delta_of(action).ok_or(EnvError::ActionOutOfRange {
            index: action.0,
            action_size: self.spec.action_size,
        })?;
        let state = &mut self.core.state;
        if !is_legal(state, delta) {
            return Err(EnvError::IllegalAction {
                delta,
                beds: state.beds,
                pending: state.pending_bed_change,
            });
        }
        adjust_pending_bed_change(state, delta);
        self.core.ledger.requested += delta;
        self.queue.schedule(
            self.config.delay_to_change_beds,
            HospitalEvent::BedChange(delta),
        )?;

        self.core.clamped_this_step = 0;
        let next_stop = SimTime::new((self.steps_taken + 1) as f64 * self.config.time_step);
        let (core, config, observer) = (&mut self.core, &self.config, &mut self.observer);
        self.queue.run_before(next_stop, |queue, ev| {
            let t = ev.fire_time;
            core.fire(config, queue, ev);
            if let Some(obs) = observer.as_mut() {
                obs(t, &core.state);
            }
        })?;
        self.steps_taken += 1;
        self.core.state.weekday = next_stop.weekday();

        let observation = get_observations(&self.core.state, &self.config);
        self.terminal = self.steps_taken >= self.steps_per_episode;
        let reward = calculate_reward(&self.core.state, &self.config);
        let mut info = Info::new();
        if self.core.clamped_this_step != 0 {
            info.insert(
                "clamped_bed_change".into(),
                InfoValue::Number(self.core.clamped_this_step as f64),
            );
        }
        if self.render_on_step {
            log::info!("{}", self.render());
        }
        Ok(StepResult {
            observation,
            reward,
            terminal: self.terminal,
            info,
        })
    }

    fn render(&self) -> String {
        let s = &self.core.state;
        format!(
            "t={} weekday={} beds={} patients={} spare_beds={} pending_bed_change={}",
            self.queue.now(),
            s.weekday,
            s.beds,
            s.patients,
            s.spare_beds,
            s.pending_bed_change
        )
    }

    fn is_legal(&self, action: ActionIndex) -> bool {
        self.delta_of(action)
            .is_some_and(|delta| is_legal(&self.core.state, delta))
    }
}
