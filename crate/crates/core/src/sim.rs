//! Discrete-event kernel: integer-microsecond clock, a `(time, seq)` ordered
//! event queue and named, seeded random streams.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};
use std::fmt;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::ScheduleError;

/// Virtual time in whole microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct SimTime(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    pub const MAX: SimTime = SimTime(u64::MAX);

    pub const fn from_micros(us: u64) -> Self {
        SimTime(us)
    }

    /// Rounds to the nearest microsecond. Negative and NaN inputs map to zero.
    pub fn from_secs(secs: f64) -> Self {
        if secs.is_nan() || secs <= 0.0 {
            return SimTime(0);
        }
        SimTime((secs * 1e6).round() as u64)
    }

    pub const fn as_micros(self) -> u64 {
        self.0
    }

    pub fn as_secs(self) -> f64 {
        self.0 as f64 / 1e6
    }

    pub fn saturating_add(self, other: SimTime) -> SimTime {
        SimTime(self.0.saturating_add(other.0))
    }

    pub fn saturating_sub(self, other: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(other.0))
    }
}

impl std::ops::Add for SimTime {
    type Output = SimTime;

    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl fmt::Display for SimTime {
    /// Seconds with exactly six decimals; exact for every representable tick.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:06}", self.0 / 1_000_000, self.0 % 1_000_000)
    }
}

/// Handle returned by [`Scheduler::schedule`]. Equal to the event's sequence number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EventId(u64);

impl EventId {
    pub fn seq(self) -> u64 {
        self.0
    }
}

/// Event priority queue ordered lexicographically by `(fire_at, seq)`.
///
/// Events scheduled for the same instant run in insertion order, which is how
/// simultaneous channel claims are resolved first-come first-served.
pub struct Scheduler<E> {
    now: SimTime,
    next_seq: u64,
    queue: BinaryHeap<Reverse<(SimTime, u64)>>,
    pending: HashMap<u64, E>,
    log: Option<Vec<(SimTime, u64)>>,
}

impl<E> Default for Scheduler<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> Scheduler<E> {
    pub fn new() -> Self {
        Scheduler {
            now: SimTime::ZERO,
            next_seq: 0,
            queue: BinaryHeap::new(),
            pending: HashMap::new(),
            log: None,
        }
    }

    /// Like [`Scheduler::new`], but records `(fire_at, seq)` of every executed event.
    pub fn with_log() -> Self {
        Scheduler {
            log: Some(Vec::new()),
            ..Self::new()
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    /// Number of scheduled events that have neither fired nor been cancelled.
    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    pub fn executed_log(&self) -> Option<&[(SimTime, u64)]> {
        self.log.as_deref()
    }

    pub fn schedule(&mut self, at: SimTime, action: E) -> Result<EventId, ScheduleError> {
        if at < self.now {
            return Err(ScheduleError::InPast { at, now: self.now });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Reverse((at, seq)));
        self.pending.insert(seq, action);
        Ok(EventId(seq))
    }

    pub fn schedule_in(&mut self, delay: SimTime, action: E) -> Result<EventId, ScheduleError> {
        let at = self.now.saturating_add(delay);
        self.schedule(at, action)
    }

    /// Returns true iff the event was still pending. A cancelled event never runs.
    pub fn cancel(&mut self, id: EventId) -> bool {
        self.pending.remove(&id.0).is_some()
    }

    /// Pops the next live event with `fire_at <= until` and advances the clock to it.
    pub fn pop_until(&mut self, until: SimTime) -> Option<(SimTime, EventId, E)> {
        while let Some(&Reverse((at, seq))) = self.queue.peek() {
            if at > until {
                return None;
            }
            self.queue.pop();
            if let Some(action) = self.pending.remove(&seq) {
                self.now = at;
                if let Some(log) = self.log.as_mut() {
                    log.push((at, seq));
                }
                return Some((at, EventId(seq), action));
            }
        }
        None
    }

    /// Executes every event with `fire_at <= until` in order; the clock ends at `until`.
    ///
    /// The handler may schedule further events; those due before `until` run in
    /// the same call.
    pub fn run<F>(&mut self, until: SimTime, mut handler: F) -> usize
    where
        F: FnMut(&mut Scheduler<E>, SimTime, E),
    {
        let mut executed = 0;
        while let Some((at, _, action)) = self.pop_until(until) {
            handler(self, at, action);
            executed += 1;
        }
        if until > self.now {
            self.now = until;
        }
        executed
    }

    /// Executes events until the queue is empty. The clock stays at the last event.
    pub fn run_to_completion<F>(&mut self, mut handler: F) -> usize
    where
        F: FnMut(&mut Scheduler<E>, SimTime, E),
    {
        let mut executed = 0;
        while let Some((at, _, action)) = self.pop_until(SimTime::MAX) {
            handler(self, at, action);
            executed += 1;
        }
        executed
    }
}

/// A named random stream.
///
/// Backed by ChaCha8 (`rand_chacha`), whose output is fully specified and
/// identical on every platform. The run seed keys the generator and the stream
/// label, hashed with 64-bit FNV-1a, selects the ChaCha stream, so distinct
/// labels give independent sequences under the same seed.
#[derive(Debug, Clone)]
pub struct RngStream {
    label: String,
    rng: ChaCha8Rng,
}

/// Stream labels used by the simulator.
pub mod streams {
    pub const TRAFFIC: &str = "traffic";
    pub const PERSISTENCE: &str = "persistence";
    pub const PLACEMENT: &str = "placement";
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

impl RngStream {
    pub fn new(seed: u64, label: &str) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(fnv1a64(label.as_bytes()));
        RngStream {
            label: label.to_owned(),
            rng,
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Uniform on `[0, 1)` with 53 bits of precision.
    pub fn next_uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Exponential variate with the given rate (events per second).
    pub fn next_exponential(&mut self, rate: f64) -> f64 {
        -(1.0 - self.next_uniform()).ln() / rate
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}
