//! Deterministic discrete-event engine with an in-process pub/sub bus.
//!
//! Virtual time is integer nanoseconds. Events fire in `(fire_time, seq)`
//! order, `seq` being assigned at enqueue. Every scheduled event ends up in
//! the event log exactly once, either processed or cancelled with a reason.
//! Published messages are recorded in the trace at publish time and
//! delivered to each matching subscriber (other than the sender) after a
//! fixed latency.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub type VirtualTime = u64;

pub const NS_PER_S: f64 = 1e9;

pub fn secs_to_ns(s: f64) -> VirtualTime {
    if s <= 0.0 {
        0
    } else {
        libm::round(s * NS_PER_S) as VirtualTime
    }
}

pub fn ns_to_secs(t: VirtualTime) -> f64 {
    t as f64 / NS_PER_S
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("cannot schedule at {at} ns, clock is already at {now} ns")]
    ScheduleInPast { at: VirtualTime, now: VirtualTime },
    #[error("engine is finalized")]
    Finalized,
}

/// Reproducible random stream for `key` under `root_seed`.
pub fn derive_rng(root_seed: u64, key: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(root_seed.to_le_bytes());
    h.update(key.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

/// MQTT-style filter match: `+` matches one level, a trailing `#` any
/// number of levels including none.
pub fn topic_matches(filter: &str, topic: &str) -> bool {
    let mut f = filter.split('/');
    let mut t = topic.split('/');
    loop {
        match (f.next(), t.next()) {
            (Some("#"), _) => return true,
            (Some("+"), Some(_)) => {}
            (Some(a), Some(b)) if a == b => {}
            (None, None) => return true,
            _ => return false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event<P> {
    pub fire_time: VirtualTime,
    pub seq: u64,
    pub target: String,
    pub payload: P,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventOutcome {
    Processed,
    Cancelled(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventLogEntry {
    pub seq: u64,
    pub fire_time: VirtualTime,
    pub target: String,
    pub outcome: EventOutcome,
}

#[derive(Debug, Clone)]
pub struct Engine<P> {
    now: VirtualTime,
    next_seq: u64,
    queue: BTreeMap<(VirtualTime, u64), Event<P>>,
    log: Vec<EventLogEntry>,
    finalized: bool,
}

impl<P> Default for Engine<P> {
    fn default() -> Self {
        Engine { now: 0, next_seq: 0, queue: BTreeMap::new(), log: Vec::new(), finalized: false }
    }
}

impl<P> Engine<P> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> VirtualTime {
        self.now
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn next_fire_time(&self) -> Option<VirtualTime> {
        self.queue.keys().next().map(|k| k.0)
    }

    pub fn schedule(&mut self, fire_time: VirtualTime, target: impl Into<String>, payload: P) -> Result<u64, SimError> {
        if self.finalized {
            return Err(SimError::Finalized);
        }
        if fire_time < self.now {
            return Err(SimError::ScheduleInPast { at: fire_time, now: self.now });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.insert((fire_time, seq), Event { fire_time, seq, target: target.into(), payload });
        Ok(seq)
    }

    pub fn schedule_after(&mut self, delay: VirtualTime, target: impl Into<String>, payload: P) -> Result<u64, SimError> {
        self.schedule(self.now.saturating_add(delay), target, payload)
    }

    /// Removes a pending event. Returns false if it already fired or was
    /// never scheduled.
    pub fn cancel(&mut self, seq: u64, reason: &str) -> bool {
        let key = self.queue.keys().find(|k| k.1 == seq).copied();
        match key.and_then(|k| self.queue.remove(&k)) {
            Some(ev) => {
                self.log.push(EventLogEntry {
                    seq,
                    fire_time: ev.fire_time,
                    target: ev.target,
                    outcome: EventOutcome::Cancelled(reason.to_string()),
                });
                true
            }
            None => false,
        }
    }

    /// Pops the next event if it fires at or before `limit`, advancing the
    /// clock to its fire time.
    pub fn pop_until(&mut self, limit: Option<VirtualTime>) -> Option<Event<P>> {
        let (&key, _) = self.queue.iter().next()?;
        if limit.is_some_and(|l| key.0 > l) {
            return None;
        }
        let ev = self.queue.remove(&key)?;
        self.now = ev.fire_time;
        self.log.push(EventLogEntry {
            seq: ev.seq,
            fire_time: ev.fire_time,
            target: ev.target.clone(),
            outcome: EventOutcome::Processed,
        });
        Some(ev)
    }

    /// Moves the clock forward without processing anything.
    pub fn advance_to(&mut self, t: VirtualTime) {
        if t > self.now {
            self.now = t;
        }
    }

    /// Processes events in order until the queue is empty or the next event
    /// lies beyond `limit`. Returns the number processed.
    pub fn run_until(&mut self, limit: Option<VirtualTime>, mut handler: impl FnMut(&mut Self, Event<P>)) -> usize {
        let mut n = 0;
        while let Some(ev) = self.pop_until(limit) {
            handler(self, ev);
            n += 1;
        }
        if let Some(l) = limit {
            self.advance_to(l);
        }
        n
    }

    /// Cancels everything still pending and refuses further scheduling.
    pub fn finalize(&mut self, reason: &str) {
        let pending: Vec<u64> = self.queue.keys().map(|k| k.1).collect();
        for seq in pending {
            self.cancel(seq, reason);
        }
        self.finalized = true;
    }

    pub fn event_log(&self) -> &[EventLogEntry] {
        &self.log
    }
}

/// One published message. Field order is the trace file's column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord<M> {
    pub t_ns: VirtualTime,
    pub seq: u64,
    pub topic: String,
    pub sender: String,
    pub correlation_id: String,
    pub payload: M,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum KernelEvent<M, T> {
    Deliver(TraceRecord<M>),
    Timer(T),
}

/// Engine plus bus: subscriptions, publication trace and timers.
#[derive(Debug, Clone)]
pub struct Kernel<M, T> {
    pub engine: Engine<KernelEvent<M, T>>,
    root_seed: u64,
    latency: VirtualTime,
    subscriptions: BTreeMap<String, BTreeSet<String>>,
    trace: Vec<TraceRecord<M>>,
}

impl<M: Clone, T> Kernel<M, T> {
    pub fn new(root_seed: u64, latency: VirtualTime) -> Self {
        Kernel { engine: Engine::new(), root_seed, latency, subscriptions: BTreeMap::new(), trace: Vec::new() }
    }

    pub fn now(&self) -> VirtualTime {
        self.engine.now()
    }

    pub fn root_seed(&self) -> u64 {
        self.root_seed
    }

    pub fn rng(&self, key: &str) -> ChaCha8Rng {
        derive_rng(self.root_seed, key)
    }

    pub fn subscribe(&mut self, subscriber: &str, filter: &str) {
        self.subscriptions.entry(subscriber.to_string()).or_default().insert(filter.to_string());
    }

    pub fn unsubscribe_all(&mut self, subscriber: &str) {
        self.subscriptions.remove(subscriber);
    }

    pub fn subscribers(&self, topic: &str) -> Vec<&str> {
        self.subscriptions
            .iter()
            .filter(|(_, filters)| filters.iter().any(|f| topic_matches(f, topic)))
            .map(|(s, _)| s.as_str())
            .collect()
    }

    /// Records the message and schedules one delivery per subscriber.
    pub fn publish(&mut self, topic: &str, sender: &str, correlation_id: &str, payload: M) -> u64 {
        let record = TraceRecord {
            t_ns: self.engine.now(),
            seq: self.trace.len() as u64,
            topic: topic.to_string(),
            sender: sender.to_string(),
            correlation_id: correlation_id.to_string(),
            payload,
        };
        let targets: Vec<String> =
            self.subscribers(topic).into_iter().filter(|s| *s != sender).map(|s| s.to_string()).collect();
        for t in targets {
            self.engine
                .schedule_after(self.latency, t, KernelEvent::Deliver(record.clone()))
                .expect("latency is non-negative");
        }
        let seq = record.seq;
        self.trace.push(record);
        seq
    }

    pub fn set_timer(&mut self, delay: VirtualTime, target: &str, timer: T) -> u64 {
        self.engine.schedule_after(delay, target, KernelEvent::Timer(timer)).expect("delay is non-negative")
    }

    pub fn trace(&self) -> &[TraceRecord<M>] {
        &self.trace
    }
}
