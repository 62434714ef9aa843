//! Distributed coordination function baseline.
//!
//! The countdown is event-driven: entering backoff schedules a single wake-up after
//! `slots * slot`; a busy period cancels it and the elapsed whole slots are deducted.

use serde::{Deserialize, Serialize};

use crate::error::IllegalTransition;
use crate::rng::RngStream;
use crate::time::SimDuration;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DcfConfig {
    pub sifs_us: u64,
    pub slot_base_us: u64,
    pub cw_min: u32,
    pub cw_max: u32,
    /// How long an originator waits for the contended ADDBA response after its
    /// request was acknowledged.
    pub addba_response_timeout_us: u64,
    /// After an unanswered ADDBA request, frames to that peer go out unaggregated
    /// for this long before a new request is tried.
    pub addba_holdoff_ms: u64,
}

impl Default for DcfConfig {
    fn default() -> Self {
        DcfConfig {
            sifs_us: 10,
            slot_base_us: 9,
            cw_min: 15,
            cw_max: 1023,
            addba_response_timeout_us: 1000,
            addba_holdoff_ms: 200,
        }
    }
}

impl DcfConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.cw_min == 0 || self.cw_max < self.cw_min {
            return Err("dcf: need 1 <= cw_min <= cw_max".into());
        }
        if self.addba_response_timeout_us == 0 {
            return Err("dcf.addba_response_timeout_us must be positive".into());
        }
        Ok(())
    }

    pub fn sifs(&self) -> SimDuration {
        SimDuration::from_micros(self.sifs_us)
    }

    pub fn timing(&self, max_distance_m: f64) -> DcfTiming {
        let slot = slot_time(SimDuration::from_micros(self.slot_base_us), max_distance_m);
        DcfTiming {
            sifs: self.sifs(),
            slot,
            difs: self.sifs() + slot * 2,
            cw_min: self.cw_min,
            cw_max: self.cw_max,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DcfTiming {
    pub sifs: SimDuration,
    pub slot: SimDuration,
    pub difs: SimDuration,
    pub cw_min: u32,
    pub cw_max: u32,
}

/// Base slot plus 1 µs per started 300 m of link length.
pub fn slot_time(slot_base: SimDuration, max_link_distance_m: f64) -> SimDuration {
    let extra = (max_link_distance_m.max(0.0) / 300.0).ceil() as u64;
    slot_base + SimDuration::from_micros(extra)
}

/// Uniform integer in `[0, cw]`.
pub fn draw_backoff(stream: &mut RngStream, cw: u32) -> u32 {
    stream.uniform_int(cw as u64) as u32
}

/// Standard doubling, clamped.
pub fn next_cw(cw: u32, cw_max: u32) -> u32 {
    (2 * (cw + 1) - 1).min(cw_max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum DcfPhase {
    Idle,
    /// Waiting for the medium to stay idle for DIFS.
    Deferring { difs_running: bool },
    Backoff,
    Transmitting,
    WaitBack,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DcfState {
    pub phase: DcfPhase,
    pub cw: u32,
    /// Slots still to count; `None` until drawn for the current contention.
    pub backoff_slots: Option<u32>,
    /// Consecutive failed exchanges.
    pub retry: u32,
}

impl DcfState {
    pub fn new(cw_min: u32) -> Self {
        DcfState {
            phase: DcfPhase::Idle,
            cw: cw_min,
            backoff_slots: None,
            retry: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DcfEvent {
    QueueNonEmpty { medium_busy: bool },
    MediumBusy { elapsed_slots: u32 },
    MediumIdle,
    DifsElapsed,
    CountdownDone,
    TxEnd,
    /// The exchange finished. `success` means everything was acknowledged;
    /// `dropped` means some MPDU hit the retry limit.
    Outcome {
        success: bool,
        dropped: bool,
        more: bool,
        medium_busy: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DcfAction {
    StartDifs,
    CancelDifs,
    StartCountdown { slots: u32 },
    CancelCountdown,
    Transmit,
    AwaitResponse,
}

/// Transition function. Randomness enters only through `backoff_rng` when a fresh
/// backoff is drawn after DIFS.
pub fn dcf_step(
    s: DcfState,
    ev: DcfEvent,
    timing: &DcfTiming,
    backoff_rng: &mut RngStream,
) -> Result<(DcfState, Vec<DcfAction>), IllegalTransition> {
    use DcfAction as A;
    use DcfEvent as E;
    use DcfPhase::*;

    let contend = |s: DcfState, busy: bool| {
        if busy {
            (
                DcfState {
                    phase: Deferring { difs_running: false },
                    ..s
                },
                vec![],
            )
        } else {
            (
                DcfState {
                    phase: Deferring { difs_running: true },
                    ..s
                },
                vec![A::StartDifs],
            )
        }
    };

    let out = match (s.phase, ev) {
        (Idle, E::QueueNonEmpty { medium_busy }) => contend(s, medium_busy),
        (_, E::QueueNonEmpty { .. }) => (s, vec![]),

        (Idle, E::MediumBusy { .. }) | (Idle, E::MediumIdle) => (s, vec![]),

        (Deferring { difs_running }, E::MediumBusy { .. }) => (
            DcfState {
                phase: Deferring { difs_running: false },
                ..s
            },
            if difs_running { vec![A::CancelDifs] } else { vec![] },
        ),
        (Deferring { difs_running: false }, E::MediumIdle) => contend(s, false),
        (Deferring { difs_running: true }, E::MediumIdle) => (s, vec![]),
        (Deferring { difs_running: true }, E::DifsElapsed) => {
            let slots = match s.backoff_slots {
                Some(k) => k,
                None => draw_backoff(backoff_rng, s.cw),
            };
            if slots == 0 {
                (
                    DcfState {
                        phase: Transmitting,
                        backoff_slots: None,
                        ..s
                    },
                    vec![A::Transmit],
                )
            } else {
                (
                    DcfState {
                        phase: Backoff,
                        backoff_slots: Some(slots),
                        ..s
                    },
                    vec![A::StartCountdown { slots }],
                )
            }
        }

        (Backoff, E::MediumBusy { elapsed_slots }) => {
            let left = s.backoff_slots.unwrap_or(0).saturating_sub(elapsed_slots);
            (
                DcfState {
                    phase: Deferring { difs_running: false },
                    backoff_slots: Some(left),
                    ..s
                },
                vec![A::CancelCountdown],
            )
        }
        (Backoff, E::MediumIdle) => (s, vec![]),
        (Backoff, E::CountdownDone) => (
            DcfState {
                phase: Transmitting,
                backoff_slots: None,
                ..s
            },
            vec![A::Transmit],
        ),

        (Transmitting, E::MediumBusy { .. }) | (Transmitting, E::MediumIdle) => (s, vec![]),
        (Transmitting, E::TxEnd) => (DcfState { phase: WaitBack, ..s }, vec![A::AwaitResponse]),

        (WaitBack, E::MediumBusy { .. }) | (WaitBack, E::MediumIdle) => (s, vec![]),
        (
            WaitBack,
            E::Outcome {
                success,
                dropped,
                more,
                medium_busy,
            },
        ) => {
            let (cw, retry) = if success || dropped {
                (timing.cw_min, 0)
            } else {
                (next_cw(s.cw, timing.cw_max), s.retry + 1)
            };
            let s = DcfState {
                cw,
                retry,
                backoff_slots: None,
                ..s
            };
            if more {
                contend(s, medium_busy)
            } else {
                (DcfState { phase: Idle, ..s }, vec![])
            }
        }

        _ => return Err(IllegalTransition::new(s.phase, ev)),
    };
    Ok(out)
}
