//! Deterministic discrete-event kernel.
//!
//! Time is an integer count of microseconds. Events are ordered by
//! `(fire_at, seq)` where `seq` is a per-simulation insertion counter, so two
//! events scheduled for the same instant run in the order they were
//! scheduled. Nothing here reads the wall clock or any global state; a run is
//! a pure function of the initial world and the events fed into it.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};
use std::fmt;
use std::ops::{Add, AddAssign, Sub};

use thiserror::Error;

/// Default bound on executed events per simulation.
pub const DEFAULT_EVENT_CAP: u64 = 10_000_000;

const MICROS_PER_SEC: u64 = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error("negative duration: {0} us")]
    NegativeDuration(i64),
    #[error("duration is not finite")]
    NonFiniteDuration,
    #[error("event at {at} would fire before the current time {now}")]
    InPast { at: SimTime, now: SimTime },
    #[error("runaway scenario: event cap of {cap} exceeded at t={at}")]
    Runaway { cap: u64, at: SimTime },
}

/// Absolute simulated time, microseconds since scenario start.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SimTime(u64);

/// A non-negative span of simulated time in microseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SimDuration(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub const fn from_micros(us: u64) -> Self {
        SimTime(us)
    }

    pub const fn as_micros(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / MICROS_PER_SEC as f64
    }

    /// Span from `earlier` to `self`, saturating at zero.
    pub fn since(self, earlier: SimTime) -> SimDuration {
        SimDuration(self.0.saturating_sub(earlier.0))
    }
}

impl SimDuration {
    pub const ZERO: SimDuration = SimDuration(0);

    pub const fn from_micros(us: u64) -> Self {
        SimDuration(us)
    }

    pub const fn from_millis(ms: u64) -> Self {
        SimDuration(ms * 1_000)
    }

    pub const fn from_secs(s: u64) -> Self {
        SimDuration(s * MICROS_PER_SEC)
    }

    pub fn try_from_micros(us: i64) -> Result<Self, SimError> {
        u64::try_from(us)
            .map(SimDuration)
            .map_err(|_| SimError::NegativeDuration(us))
    }

    /// Rounds to the nearest microsecond.
    pub fn try_from_secs_f64(secs: f64) -> Result<Self, SimError> {
        if !secs.is_finite() {
            return Err(SimError::NonFiniteDuration);
        }
        let us = (secs * MICROS_PER_SEC as f64).round();
        if us < 0.0 {
            return Err(SimError::NegativeDuration(us as i64));
        }
        Ok(SimDuration(us as u64))
    }

    pub const fn as_micros(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / MICROS_PER_SEC as f64
    }

    pub fn saturating_sub(self, other: SimDuration) -> SimDuration {
        SimDuration(self.0.saturating_sub(other.0))
    }

    /// Multiplies by `factor`, rounding to the nearest microsecond.
    pub fn scale(self, factor: f64) -> SimDuration {
        SimDuration((self.0 as f64 * factor).round().max(0.0) as u64)
    }
}

impl Add<SimDuration> for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimDuration) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl AddAssign<SimDuration> for SimTime {
    fn add_assign(&mut self, rhs: SimDuration) {
        self.0 += rhs.0;
    }
}

impl Sub<SimTime> for SimTime {
    type Output = SimDuration;
    fn sub(self, rhs: SimTime) -> SimDuration {
        self.since(rhs)
    }
}

impl Add for SimDuration {
    type Output = SimDuration;
    fn add(self, rhs: SimDuration) -> SimDuration {
        SimDuration(self.0 + rhs.0)
    }
}

impl AddAssign for SimDuration {
    fn add_assign(&mut self, rhs: SimDuration) {
        self.0 += rhs.0;
    }
}

impl std::iter::Sum for SimDuration {
    fn sum<I: Iterator<Item = SimDuration>>(iter: I) -> SimDuration {
        iter.fold(SimDuration::ZERO, |a, b| a + b)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}us", self.0)
    }
}

impl fmt::Display for SimDuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.6}s", self.as_secs_f64())
    }
}

/// Handle returned by [`Scheduler::schedule`]; the event's sequence number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EventId(u64);

impl EventId {
    pub fn seq(self) -> u64 {
        self.0
    }
}

pub type Action<W> = Box<dyn FnOnce(&mut W, &mut Scheduler<W>)>;

struct Pending<W> {
    fire_at: SimTime,
    seq: u64,
    target: &'static str,
    label: String,
    action: Action<W>,
}

impl<W> PartialEq for Pending<W> {
    fn eq(&self, other: &Self) -> bool {
        self.seq == other.seq
    }
}

impl<W> Eq for Pending<W> {}

impl<W> PartialOrd for Pending<W> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<W> Ord for Pending<W> {
    // BinaryHeap is a max-heap; invert so the earliest (fire_at, seq) pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.fire_at, other.seq).cmp(&(self.fire_at, self.seq))
    }
}

/// One executed event, as written to the event-trace log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRecord {
    pub time: SimTime,
    pub seq: u64,
    pub entity: &'static str,
    pub action: String,
}

impl fmt::Display for TraceRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}\t{}\t{}\t{}",
            self.time.as_micros(),
            self.seq,
            self.entity,
            self.action
        )
    }
}

/// Event queue and virtual clock. Actions receive `&mut Scheduler` so they can
/// schedule follow-up events.
pub struct Scheduler<W> {
    now: SimTime,
    next_seq: u64,
    queue: BinaryHeap<Pending<W>>,
    cancelled: HashSet<u64>,
    executed: u64,
    trace: Option<Vec<TraceRecord>>,
}

impl<W> Default for Scheduler<W> {
    fn default() -> Self {
        Self::new()
    }
}

impl<W> Scheduler<W> {
    pub fn new() -> Self {
        Scheduler {
            now: SimTime::ZERO,
            next_seq: 0,
            queue: BinaryHeap::new(),
            cancelled: HashSet::new(),
            executed: 0,
            trace: None,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn executed(&self) -> u64 {
        self.executed
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn schedule(
        &mut self,
        delay: SimDuration,
        target: &'static str,
        label: impl Into<String>,
        action: impl FnOnce(&mut W, &mut Scheduler<W>) + 'static,
    ) -> EventId {
        let at = self.now + delay;
        self.push(at, target, label.into(), Box::new(action))
    }

    pub fn schedule_at(
        &mut self,
        at: SimTime,
        target: &'static str,
        label: impl Into<String>,
        action: impl FnOnce(&mut W, &mut Scheduler<W>) + 'static,
    ) -> Result<EventId, SimError> {
        if at < self.now {
            return Err(SimError::InPast { at, now: self.now });
        }
        Ok(self.push(at, target, label.into(), Box::new(action)))
    }

    /// Cancels a pending event. Returns false if it already ran or was never
    /// scheduled.
    pub fn cancel(&mut self, id: EventId) -> bool {
        if id.0 >= self.next_seq || !self.queue.iter().any(|p| p.seq == id.0) {
            return false;
        }
        self.cancelled.insert(id.0)
    }

    fn push(&mut self, fire_at: SimTime, target: &'static str, label: String, action: Action<W>) -> EventId {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Pending {
            fire_at,
            seq,
            target,
            label,
            action,
        });
        EventId(seq)
    }

    fn pop(&mut self) -> Option<Pending<W>> {
        while let Some(ev) = self.queue.pop() {
            if self.cancelled.remove(&ev.seq) {
                continue;
            }
            return Some(ev);
        }
        None
    }

    fn peek_time(&mut self) -> Option<SimTime> {
        loop {
            let top = self.queue.peek()?;
            if self.cancelled.contains(&top.seq) {
                let seq = top.seq;
                self.queue.pop();
                self.cancelled.remove(&seq);
                continue;
            }
            return Some(top.fire_at);
        }
    }
}

/// A world plus its scheduler.
pub struct Simulation<W> {
    world: W,
    sched: Scheduler<W>,
    cap: u64,
}

impl<W> Simulation<W> {
    pub fn new(world: W) -> Self {
        Simulation {
            world,
            sched: Scheduler::new(),
            cap: DEFAULT_EVENT_CAP,
        }
    }

    pub fn with_event_cap(mut self, cap: u64) -> Self {
        self.cap = cap;
        self
    }

    /// Record every executed event for the trace log.
    pub fn with_trace(mut self) -> Self {
        self.sched.trace = Some(Vec::new());
        self
    }

    pub fn now(&self) -> SimTime {
        self.sched.now
    }

    pub fn world(&self) -> &W {
        &self.world
    }

    pub fn world_mut(&mut self) -> &mut W {
        &mut self.world
    }

    pub fn scheduler(&mut self) -> &mut Scheduler<W> {
        &mut self.sched
    }

    pub fn into_world(self) -> W {
        self.world
    }

    pub fn trace(&self) -> &[TraceRecord] {
        self.sched.trace.as_deref().unwrap_or(&[])
    }

    pub fn take_trace(&mut self) -> Vec<TraceRecord> {
        self.sched.trace.as_mut().map(std::mem::take).unwrap_or_default()
    }

    pub fn schedule(
        &mut self,
        delay: SimDuration,
        target: &'static str,
        label: impl Into<String>,
        action: impl FnOnce(&mut W, &mut Scheduler<W>) + 'static,
    ) -> EventId {
        self.sched.schedule(delay, target, label, action)
    }

    /// Executes the next event. Returns `Ok(false)` when the queue is empty.
    pub fn step(&mut self) -> Result<bool, SimError> {
        let Some(ev) = self.sched.pop() else {
            return Ok(false);
        };
        if self.sched.executed >= self.cap {
            return Err(SimError::Runaway {
                cap: self.cap,
                at: ev.fire_at,
            });
        }
        debug_assert!(ev.fire_at >= self.sched.now);
        self.sched.now = ev.fire_at;
        self.sched.executed += 1;
        if let Some(trace) = self.sched.trace.as_mut() {
            trace.push(TraceRecord {
                time: ev.fire_at,
                seq: ev.seq,
                entity: ev.target,
                action: ev.label,
            });
        }
        (ev.action)(&mut self.world, &mut self.sched);
        Ok(true)
    }

    /// Runs until the queue drains; returns the clock after the last event.
    pub fn run_to_completion(&mut self) -> Result<SimTime, SimError> {
        while self.step()? {}
        Ok(self.sched.now)
    }

    /// Runs every event with `fire_at <= until`, then advances the clock to
    /// `until`.
    pub fn run_until(&mut self, until: SimTime) -> Result<SimTime, SimError> {
        while let Some(t) = self.sched.peek_time() {
            if t > until {
                break;
            }
            self.step()?;
        }
        if until > self.sched.now {
            self.sched.now = until;
        }
        Ok(self.sched.now)
    }
}
