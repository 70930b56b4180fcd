//! Minimal discrete-event kernel.
//!
//! A simulated clock in days, a time-ordered event queue with FIFO tie-breaking,
//! run-until semantics, and a seedable random stream. Events carry an opaque
//! payload; the owner of the queue interprets payloads when they fire and may
//! schedule further events from inside the handler.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DesError {
    #[error("cannot schedule an event with negative or non-finite delay {0}")]
    InvalidDelay(f64),
    #[error("cannot run until {target}: clock is already at {now}")]
    ClockRewind { now: f64, target: f64 },
    #[error("exponential mean must be positive and finite, got {0}")]
    InvalidMean(f64),
}

/// Simulated time in days.
#[derive(Debug, Clone, Copy, Default, PartialEq, PartialOrd, serde::Serialize)]
pub struct SimTime(f64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0.0);

    pub fn new(days: f64) -> Self {
        SimTime(days)
    }

    pub fn days(self) -> f64 {
        self.0
    }

    /// Day of week, `floor(t) mod 7`.
    pub fn weekday(self) -> u8 {
        (self.0.floor() as u64 % 7) as u8
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EventId(u64);

impl EventId {
    pub fn sequence(self) -> u64 {
        self.0
    }
}

/// A scheduled occurrence of `payload` at `fire_time`.
#[derive(Debug, Clone)]
pub struct Event<P> {
    pub fire_time: SimTime,
    pub id: EventId,
    pub payload: P,
}

impl<P> Event<P> {
    fn key(&self) -> (f64, u64) {
        (self.fire_time.0, self.id.0)
    }
}

impl<P> PartialEq for Event<P> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<P> Eq for Event<P> {}

impl<P> PartialOrd for Event<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

// BinaryHeap is a max-heap; reverse so the earliest (time, seq) pops first.
impl<P> Ord for Event<P> {
    fn cmp(&self, other: &Self) -> Ordering {
        let (ta, sa) = self.key();
        let (tb, sb) = other.key();
        ta.total_cmp(&tb).then(sa.cmp(&sb)).reverse()
    }
}

/// Time-ordered event queue owning the simulation clock.
#[derive(Debug, Clone)]
pub struct EventQueue<P> {
    heap: BinaryHeap<Event<P>>,
    now: SimTime,
    next_seq: u64,
}

impl<P> Default for EventQueue<P> {
    fn default() -> Self {
        Self::new()
    }
}

impl<P> EventQueue<P> {
    pub fn new() -> Self {
        Self {
            heap: BinaryHeap::new(),
            now: SimTime::ZERO,
            next_seq: 0,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Time of the earliest queued event, if any.
    pub fn peek_time(&self) -> Option<SimTime> {
        self.heap.peek().map(|e| e.fire_time)
    }

    /// Schedules `payload` to fire `delay` days from now.
    pub fn schedule(&mut self, delay: f64, payload: P) -> Result<EventId, DesError> {
        if delay.is_nan() || delay < 0.0 || delay.is_infinite() {
            return Err(DesError::InvalidDelay(delay));
        }
        let id = EventId(self.next_seq);
        self.next_seq += 1;
        self.heap.push(Event {
            fire_time: SimTime(self.now.0 + delay),
            id,
            payload,
        });
        Ok(id)
    }

    /// Pops the next event if it fires at or before `target`, advancing the clock to it.
    pub fn pop_due(&mut self, target: SimTime) -> Option<Event<P>> {
        match self.heap.peek() {
            Some(e) if e.fire_time.0 <= target.0 => {
                let ev = self.heap.pop().expect("peeked");
                self.now = ev.fire_time;
                Some(ev)
            }
            _ => None,
        }
    }

    /// Fires every event with `fire_time <= target` in (time, sequence) order,
    /// including events scheduled by `fire` during the call, then sets the clock
    /// to `target`. Returns the number of events fired.
    pub fn run_until<F>(&mut self, target: SimTime, mut fire: F) -> Result<usize, DesError>
    where
        F: FnMut(&mut Self, Event<P>),
    {
        if target.0.is_nan() || target.0 < self.now.0 {
            return Err(DesError::ClockRewind {
                now: self.now.0,
                target: target.0,
            });
        }
        let mut fired = 0;
        while let Some(ev) = self.pop_due(target) {
            fire(self, ev);
            fired += 1;
        }
        self.now = target;
        Ok(fired)
    }

    /// Fires every event with `fire_time < target`, then sets the clock to
    /// `target`. Events due exactly at `target` stay queued for the next call,
    /// matching SimPy's `env.run(until=target)`.
    pub fn run_before<F>(&mut self, target: SimTime, mut fire: F) -> Result<usize, DesError>
    where
        F: FnMut(&mut Self, Event<P>),
    {
        if target.0.is_nan() || target.0 < self.now.0 {
            return Err(DesError::ClockRewind {
                now: self.now.0,
                target: target.0,
            });
        }
        let mut fired = 0;
        while matches!(self.heap.peek(), Some(e) if e.fire_time.0 < target.0) {
            let ev = self.heap.pop().expect("peeked");
            self.now = ev.fire_time;
            fire(self, ev);
            fired += 1;
        }
        self.now = target;
        Ok(fired)
    }
}

/// Seedable random stream backed by ChaCha8.
///
/// `ChaCha8Rng::seed_from_u64` expands the seed with PCG32 as documented by
/// `rand_core`, and independent streams of the same seed are selected with
/// ChaCha's 64-bit stream id.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    inner: ChaCha8Rng,
}

const TWO_POW_NEG_53: f64 = 1.0 / (1u64 << 53) as f64;

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { seed, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn sample_uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * TWO_POW_NEG_53
    }

    /// Uniform in the open interval `(0, 1)`.
    pub fn sample_open_uniform(&mut self) -> f64 {
        ((self.inner.next_u64() >> 11) as f64 + 0.5) * TWO_POW_NEG_53
    }

    /// Exponential draw with the given mean by inverse CDF.
    pub fn sample_exponential(&mut self, mean: f64) -> Result<f64, DesError> {
        check_mean(mean)?;
        let u = self.sample_open_uniform();
        exponential_from_uniform(mean, u)
    }

    pub fn sample_standard_normal(&mut self) -> f64 {
        use rand_distr::{Distribution, StandardNormal};
        StandardNormal.sample(self)
    }

    /// Uniform index in `0..n`. `n` must be non-zero.
    pub fn sample_index(&mut self, n: usize) -> usize {
        use rand::Rng;
        self.random_range(0..n)
    }
}

fn check_mean(mean: f64) -> Result<(), DesError> {
    if mean > 0.0 && mean.is_finite() {
        Ok(())
    } else {
        Err(DesError::InvalidMean(mean))
    }
}

/// `-mean * ln(u)` for `u` in `(0, 1)`.
pub fn exponential_from_uniform(mean: f64, u: f64) -> Result<f64, DesError> {
    check_mean(mean)?;
    Ok(-mean * u.ln())
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}
