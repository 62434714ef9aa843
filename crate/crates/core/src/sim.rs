//! Deterministic discrete-event engine.
//!
//! Events are ordered by `(fire_at, seq)` where `seq` is the insertion counter, so
//! simultaneous events dispatch in the order they were scheduled. Cancellation is
//! lazy: the heap entry stays behind and is skipped when it surfaces.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};

use crate::error::SimError;
use crate::ids::NodeId;
use crate::time::{SimDuration, SimTime};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EventHandle(u64);

#[derive(Debug, Clone, PartialEq)]
pub struct Event<E> {
    pub fire_at: SimTime,
    pub seq: u64,
    pub target: NodeId,
    pub payload: E,
}

#[derive(Debug)]
pub struct Scheduler<E> {
    now: SimTime,
    next_seq: u64,
    heap: BinaryHeap<Reverse<(SimTime, u64)>>,
    live: HashMap<u64, (NodeId, E)>,
    processed: u64,
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
            heap: BinaryHeap::new(),
            live: HashMap::new(),
            processed: 0,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    /// Number of live (not yet fired, not cancelled) events.
    pub fn len(&self) -> usize {
        self.live.len()
    }

    pub fn is_empty(&self) -> bool {
        self.live.is_empty()
    }

    pub fn processed(&self) -> u64 {
        self.processed
    }

    pub fn schedule(&mut self, fire_at: SimTime, target: NodeId, payload: E) -> Result<EventHandle, SimError> {
        if fire_at < self.now {
            return Err(SimError::ScheduleInPast { now: self.now, fire_at });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Reverse((fire_at, seq)));
        self.live.insert(seq, (target, payload));
        Ok(EventHandle(seq))
    }

    pub fn schedule_in(&mut self, delay: SimDuration, target: NodeId, payload: E) -> Result<EventHandle, SimError> {
        self.schedule(self.now + delay, target, payload)
    }

    /// Returns true if the event was live and has been removed.
    pub fn cancel(&mut self, handle: EventHandle) -> bool {
        self.live.remove(&handle.0).is_some()
    }

    pub fn is_live(&self, handle: EventHandle) -> bool {
        self.live.contains_key(&handle.0)
    }

    /// Pops the next live event with `fire_at <= t_end`, advancing the clock to it.
    pub fn pop_until(&mut self, t_end: SimTime) -> Option<Event<E>> {
        while let Some(&Reverse((fire_at, seq))) = self.heap.peek() {
            if fire_at > t_end {
                return None;
            }
            self.heap.pop();
            if let Some((target, payload)) = self.live.remove(&seq) {
                debug_assert!(fire_at >= self.now);
                self.now = fire_at;
                self.processed += 1;
                return Some(Event { fire_at, seq, target, payload });
            }
        }
        None
    }

    /// Moves the clock forward to `t` once no earlier events remain.
    pub fn advance_to(&mut self, t: SimTime) {
        if t > self.now {
            self.now = t;
        }
    }

    /// Processes every event with `fire_at <= t_end` in order, then leaves the clock at `t_end`.
    pub fn run_until<Err>(
        &mut self,
        t_end: SimTime,
        mut handler: impl FnMut(&mut Self, Event<E>) -> Result<(), Err>,
    ) -> Result<u64, Err> {
        let mut count = 0;
        while let Some(ev) = self.pop_until(t_end) {
            handler(self, ev)?;
            count += 1;
        }
        self.advance_to(t_end);
        Ok(count)
    }
}
