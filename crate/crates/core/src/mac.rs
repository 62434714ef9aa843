//! Frame, queue and block-ack machinery shared by both MACs.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{IllegalTransition, SimError};
use crate::ids::{FlowId, NodeId};
use crate::phy::airtime::MAX_AMPDU_LEN;
use crate::time::{SimDuration, SimTime};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum FrameKind {
    Data,
    Back,
    TokenGrant,
    TokenRelease,
    AddbaRequest,
    AddbaResponse,
    Ack,
}

/// A packet waiting at the IP layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Packet {
    pub flow: FlowId,
    pub seq: u64,
    pub receiver: NodeId,
    pub payload_bytes: u32,
    pub created_at: SimTime,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mpdu {
    pub flow: FlowId,
    pub seq: u64,
    pub receiver: NodeId,
    pub payload_bytes: u32,
    /// IP enqueue time, used for end-to-end delay.
    pub created_at: SimTime,
    /// MAC enqueue time, used for the TTL.
    pub enqueued_at: SimTime,
    pub retries: u8,
    /// Channel access in which this MPDU was last sent.
    pub last_access: Option<u64>,
}

impl Mpdu {
    pub fn from_packet(p: Packet, now: SimTime) -> Self {
        Mpdu {
            flow: p.flow,
            seq: p.seq,
            receiver: p.receiver,
            payload_bytes: p.payload_bytes,
            created_at: p.created_at,
            enqueued_at: now,
            retries: 0,
            last_access: None,
        }
    }
}

/// One channel access: its number and the latest IP arrival it may carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Access {
    pub id: u64,
    pub arrived_by: SimTime,
}

impl Access {
    /// An access that may carry anything queued.
    pub fn unbounded(id: u64) -> Self {
        Access {
            id,
            arrived_by: SimTime(u64::MAX),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ampdu {
    pub receiver: NodeId,
    pub mpdus: Vec<Mpdu>,
}

impl Ampdu {
    pub fn len(&self) -> usize {
        self.mpdus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mpdus.is_empty()
    }

    pub fn payloads(&self) -> Vec<u32> {
        self.mpdus.iter().map(|m| m.payload_bytes).collect()
    }

    pub fn bitmap_template(&self) -> BackBitmap {
        BackBitmap {
            start_seq: self.mpdus.first().map_or(0, |m| m.seq),
            len: self.mpdus.len() as u8,
            received: 0,
        }
    }
}

/// Block-ack bitmap. Bit `i` refers to the `i`-th MPDU of the acknowledged A-MPDU.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BackBitmap {
    pub start_seq: u64,
    pub len: u8,
    pub received: u8,
}

impl BackBitmap {
    pub fn set(&mut self, i: usize) {
        self.received |= 1 << i;
    }

    pub fn is_set(&self, i: usize) -> bool {
        self.received & (1 << i) != 0
    }

    pub fn count(&self) -> u32 {
        self.received.count_ones()
    }
}

/// How a sender picks MPDUs for an aggregate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Selection {
    /// Only the run at the head of the queue; a head MPDU for another receiver blocks.
    HeadOfLine,
    /// The first MPDUs for the receiver in queue order, skipping other receivers.
    ByReceiver,
}

#[derive(Debug, Clone)]
pub struct IpQueue {
    capacity: usize,
    queues: Vec<VecDeque<Packet>>,
    len: usize,
    cursor: usize,
}

impl IpQueue {
    /// `lanes` = 1 gives one shared FIFO; more lanes are served round-robin.
    pub fn new(capacity: usize, lanes: usize) -> Self {
        IpQueue {
            capacity,
            queues: vec![VecDeque::new(); lanes.max(1)],
            len: 0,
            cursor: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Returns false (and drops the packet) when full.
    pub fn enqueue(&mut self, packet: Packet, lane: usize) -> bool {
        if self.len >= self.capacity {
            return false;
        }
        let n = self.queues.len();
        self.queues[lane % n].push_back(packet);
        self.len += 1;
        true
    }

    fn pop(&mut self) -> Option<Packet> {
        let n = self.queues.len();
        for k in 0..n {
            let lane = (self.cursor + k) % n;
            if let Some(p) = self.queues[lane].pop_front() {
                self.cursor = (lane + 1) % n;
                self.len -= 1;
                return Some(p);
            }
        }
        None
    }

    pub fn iter(&self) -> impl Iterator<Item = &Packet> {
        self.queues.iter().flatten()
    }
}

#[derive(Debug, Clone)]
pub struct MacQueue {
    capacity: usize,
    ttl: SimDuration,
    fifo: VecDeque<Mpdu>,
    in_flight: usize,
}

/// What building an aggregate removed from the queue.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BuildResult {
    pub ampdu: Option<Ampdu>,
    pub expired: Vec<Mpdu>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BackOutcome {
    pub acked: Vec<Mpdu>,
    pub retried: usize,
    pub dropped: Vec<Mpdu>,
}

impl MacQueue {
    pub fn new(capacity: usize, ttl: SimDuration) -> Self {
        MacQueue {
            capacity,
            ttl,
            fifo: VecDeque::new(),
            in_flight: 0,
        }
    }

    /// Queued plus in flight.
    pub fn occupancy(&self) -> usize {
        self.fifo.len() + self.in_flight
    }

    pub fn queued(&self) -> usize {
        self.fifo.len()
    }

    pub fn in_flight(&self) -> usize {
        self.in_flight
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &Mpdu> {
        self.fifo.iter()
    }

    pub fn free(&self) -> usize {
        self.capacity.saturating_sub(self.occupancy())
    }

    fn is_dead(&self, m: &Mpdu, now: SimTime) -> bool {
        now.since(m.enqueued_at) > self.ttl
    }

    /// MPDUs that could go out in `access`, for `receiver`, after TTL expiry.
    pub fn eligible(&self, receiver: NodeId, selection: Selection, access: Access, now: SimTime) -> usize {
        let mut n = 0;
        for m in &self.fifo {
            if self.is_dead(m, now) {
                continue;
            }
            if m.receiver != receiver {
                if selection == Selection::HeadOfLine {
                    break;
                }
                continue;
            }
            if m.last_access == Some(access.id) || m.created_at > access.arrived_by {
                break;
            }
            n += 1;
        }
        n
    }

    /// Receiver of the first live MPDU.
    pub fn head_receiver(&self, now: SimTime) -> Option<NodeId> {
        self.fifo.iter().find(|m| !self.is_dead(m, now)).map(|m| m.receiver)
    }

    /// Removes expired MPDUs from anywhere in the queue.
    pub fn expire(&mut self, now: SimTime) -> Vec<Mpdu> {
        let ttl = self.ttl;
        let mut expired = Vec::new();
        self.fifo.retain(|m| {
            let dead = now.since(m.enqueued_at) > ttl;
            if dead {
                expired.push(m.clone());
            }
            !dead
        });
        expired
    }

    /// Takes up to `max_mpdus` MPDUs for `receiver`, stamping them with `access`.
    /// Only one MPDU is taken when `aggregate` is false. MPDUs already sent in the same
    /// access, or created after it began, end the run, so an aggregate never jumps ahead
    /// of an earlier sequence.
    pub fn build_ampdu(
        &mut self,
        receiver: NodeId,
        max_mpdus: usize,
        aggregate: bool,
        selection: Selection,
        access: Access,
        now: SimTime,
    ) -> Result<BuildResult, SimError> {
        if !(1..=MAX_AMPDU_LEN).contains(&max_mpdus) {
            return Err(SimError::InvalidParameter(format!("max_mpdus {max_mpdus}")));
        }
        let limit = if aggregate { max_mpdus } else { 1 };
        let mut result = BuildResult::default();
        let mut taken = Vec::new();
        let mut i = 0;
        while i < self.fifo.len() && taken.len() < limit {
            if self.is_dead(&self.fifo[i], now) {
                if selection == Selection::HeadOfLine && i > 0 {
                    break;
                }
                result.expired.push(self.fifo.remove(i).expect("index in range"));
                continue;
            }
            let m = &self.fifo[i];
            if m.receiver != receiver {
                if selection == Selection::HeadOfLine {
                    break;
                }
                i += 1;
                continue;
            }
            if m.last_access == Some(access.id) || m.created_at > access.arrived_by {
                break;
            }
            let mut m = self.fifo.remove(i).expect("index in range");
            m.last_access = Some(access.id);
            taken.push(m);
        }
        if !taken.is_empty() {
            self.in_flight += taken.len();
            result.ampdu = Some(Ampdu { receiver, mpdus: taken });
        }
        Ok(result)
    }

    /// Settles an outstanding aggregate against its block ack (`None` = no BACK).
    pub fn process_back(
        &mut self,
        sent: Ampdu,
        back: Option<&BackBitmap>,
        retry_limit: u8,
    ) -> Result<BackOutcome, SimError> {
        if sent.len() > self.in_flight {
            return Err(SimError::InvalidParameter("more MPDUs settled than in flight".into()));
        }
        if let Some(b) = back {
            let first = sent.mpdus.first().map_or(0, |m| m.seq);
            if b.len as usize != sent.len() || b.start_seq != first {
                return Err(SimError::InvalidParameter(format!(
                    "BACK covers {}+{}, aggregate is {}+{}",
                    b.start_seq,
                    b.len,
                    first,
                    sent.len()
                )));
            }
        }
        self.in_flight -= sent.len();
        let mut out = BackOutcome::default();
        let mut requeue = Vec::new();
        for (i, mut m) in sent.mpdus.into_iter().enumerate() {
            if back.is_some_and(|b| b.is_set(i)) {
                out.acked.push(m);
            } else if m.retries >= retry_limit {
                out.dropped.push(m);
            } else {
                m.retries += 1;
                requeue.push(m);
            }
        }
        out.retried = requeue.len();
        for m in requeue.into_iter().rev() {
            self.fifo.push_front(m);
        }
        Ok(out)
    }

    /// Moves IP head packets into the MAC queue while there is room.
    pub fn transfer_from(&mut self, ip: &mut IpQueue, now: SimTime) -> usize {
        let mut moved = 0;
        while self.occupancy() < self.capacity {
            match ip.pop() {
                Some(p) => {
                    self.fifo.push_back(Mpdu::from_packet(p, now));
                    moved += 1;
                }
                None => break,
            }
        }
        moved
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AddbaState {
    Idle,
    Pending,
    Established,
    /// Too many failed handshakes; this direction stays unaggregated.
    Disabled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AddbaEvent {
    SendRequest,
    RxRequest,
    RxResponse,
    Timeout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AddbaSession {
    pub state: AddbaState,
    pub failures: u8,
}

pub const ADDBA_MAX_ATTEMPTS: u8 = 4;

impl Default for AddbaSession {
    fn default() -> Self {
        AddbaSession {
            state: AddbaState::Idle,
            failures: 0,
        }
    }
}

impl AddbaSession {
    pub fn established(&self) -> bool {
        self.state == AddbaState::Established
    }

    /// True when a handshake should be attempted before sending `eligible` MPDUs.
    pub fn wants_request(&self, eligible: usize) -> bool {
        self.state == AddbaState::Idle && eligible >= 2
    }
}

pub fn addba_step(s: AddbaSession, ev: AddbaEvent) -> Result<AddbaSession, IllegalTransition> {
    use AddbaEvent::*;
    use AddbaState::*;
    let next = match (s.state, ev) {
        (Idle, SendRequest) => AddbaSession { state: Pending, ..s },
        (Pending, RxResponse) | (Idle, RxResponse) | (Disabled, RxResponse) | (Established, RxResponse) => {
            AddbaSession { state: Established, ..s }
        }
        (Idle, RxRequest) | (Established, RxRequest) | (Pending, RxRequest) | (Disabled, RxRequest) => {
            AddbaSession { state: Established, ..s }
        }
        (Pending, Timeout) => {
            let failures = s.failures + 1;
            let state = if failures >= ADDBA_MAX_ATTEMPTS { Disabled } else { Idle };
            AddbaSession { state, failures }
        }
        _ => return Err(IllegalTransition::new(s.state, ev)),
    };
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const R1: NodeId = NodeId(1);
    const R2: NodeId = NodeId(2);
    const TTL: SimDuration = SimDuration::from_millis(500);

    fn pkt(seq: u64, receiver: NodeId) -> Packet {
        Packet {
            flow: FlowId(receiver.0 as u32),
            seq,
            receiver,
            payload_bytes: 512,
            created_at: SimTime::ZERO,
        }
    }

    fn queue_of(receivers: &[NodeId]) -> MacQueue {
        let mut ip = IpQueue::new(1000, 1);
        for (i, &r) in receivers.iter().enumerate() {
            assert!(ip.enqueue(pkt(i as u64, r), 0));
        }
        let mut mac = MacQueue::new(400, TTL);
        mac.transfer_from(&mut ip, SimTime::ZERO);
        mac
    }

    #[test]
    fn ip_queue_capacity_boundary() {
        let mut ip = IpQueue::new(1000, 1);
        for i in 0..999 {
            assert!(ip.enqueue(pkt(i, R1), 0));
        }
        assert!(ip.enqueue(pkt(999, R1), 0));
        assert_eq!(ip.len(), 1000);
        assert!(!ip.enqueue(pkt(1000, R1), 0));
        assert_eq!(ip.len(), 1000);
    }

    #[test]
    fn transfer_respects_free_slots_and_order() {
        let mut ip = IpQueue::new(1000, 1);
        for i in 0..10 {
            ip.enqueue(pkt(i, R1), 0);
        }
        let mut mac = MacQueue::new(3, TTL);
        assert_eq!(mac.transfer_from(&mut ip, SimTime::ZERO), 3);
        let seqs: Vec<u64> = mac.iter().map(|m| m.seq).collect();
        assert_eq!(seqs, vec![0, 1, 2]);
        assert_eq!(mac.transfer_from(&mut ip, SimTime::ZERO), 0);
        assert_eq!(ip.len(), 7);
    }

    #[test]
    fn lanes_are_served_round_robin() {
        let mut ip = IpQueue::new(10, 2);
        ip.enqueue(pkt(0, R1), 0);
        ip.enqueue(pkt(1, R1), 0);
        ip.enqueue(pkt(2, R2), 1);
        let mut mac = MacQueue::new(10, TTL);
        mac.transfer_from(&mut ip, SimTime::ZERO);
        let order: Vec<u64> = mac.iter().map(|m| m.seq).collect();
        assert_eq!(order, vec![0, 2, 1]);
    }

    #[test]
    fn head_run_of_four() {
        let mut q = queue_of(&[R1, R1, R1, R1, R2]);
        let r = q.build_ampdu(R1, 4, true, Selection::HeadOfLine, Access::unbounded(0), SimTime::ZERO).unwrap();
        assert_eq!(r.ampdu.unwrap().len(), 4);
        assert_eq!(q.in_flight(), 4);
        assert_eq!(q.occupancy(), 5);
    }

    #[test]
    fn head_of_line_blocks_other_receiver() {
        let mut q = queue_of(&[R2, R1, R1]);
        let r = q.build_ampdu(R1, 4, true, Selection::HeadOfLine, Access::unbounded(0), SimTime::ZERO).unwrap();
        assert!(r.ampdu.is_none());
        let r = q.build_ampdu(R1, 4, true, Selection::ByReceiver, Access::unbounded(0), SimTime::ZERO).unwrap();
        assert_eq!(r.ampdu.unwrap().mpdus.iter().map(|m| m.seq).collect::<Vec<_>>(), vec![1, 2]);
    }

    #[test]
    fn late_arrivals_wait_for_next_access() {
        let mut ip = IpQueue::new(1000, 1);
        for i in 0..4u64 {
            let mut p = pkt(i, R1);
            p.created_at = SimTime(i * 1_000_000);
            assert!(ip.enqueue(p, 0));
        }
        let mut q = MacQueue::new(400, TTL);
        q.transfer_from(&mut ip, SimTime(3_000_000));
        let access = Access {
            id: 1,
            arrived_by: SimTime(1_000_000),
        };
        let r = q.build_ampdu(R1, 4, true, Selection::ByReceiver, access, SimTime(3_000_000)).unwrap();
        assert_eq!(r.ampdu.unwrap().mpdus.iter().map(|m| m.seq).collect::<Vec<_>>(), vec![0, 1]);
    }

    #[test]
    fn stale_head_expires() {
        let mut q = queue_of(&[R1, R1]);
        let now = SimTime::from_secs_f64(0.501);
        let r = q.build_ampdu(R1, 4, true, Selection::HeadOfLine, Access::unbounded(0), now).unwrap();
        assert_eq!(r.expired.len(), 2);
        assert!(r.ampdu.is_none());
        // Exactly at the TTL is still alive.
        let mut q = queue_of(&[R1]);
        let r = q.build_ampdu(R1, 4, true, Selection::HeadOfLine, Access::unbounded(0), SimTime::from_secs_f64(0.5)).unwrap();
        assert!(r.expired.is_empty() && r.ampdu.is_some());
    }

    #[test]
    fn no_session_means_single_mpdu() {
        let mut q = queue_of(&[R1, R1, R1]);
        let r = q.build_ampdu(R1, 4, false, Selection::HeadOfLine, Access::unbounded(0), SimTime::ZERO).unwrap();
        assert_eq!(r.ampdu.unwrap().len(), 1);
    }

    #[test]
    fn same_access_is_not_resent() {
        let mut q = queue_of(&[R1, R1, R1, R1, R1, R1]);
        let a = q.build_ampdu(R1, 4, true, Selection::ByReceiver, Access::unbounded(7), SimTime::ZERO).unwrap().ampdu.unwrap();
        let mut b = a.bitmap_template();
        b.set(0);
        b.set(2);
        q.process_back(a, Some(&b), 7).unwrap();
        // Two retried MPDUs sit at the head, stamped with access 7.
        assert_eq!(q.eligible(R1, Selection::ByReceiver, Access::unbounded(7), SimTime::ZERO), 0);
        assert_eq!(q.eligible(R1, Selection::ByReceiver, Access::unbounded(8), SimTime::ZERO), 4);
        let r = q.build_ampdu(R1, 4, true, Selection::ByReceiver, Access::unbounded(7), SimTime::ZERO).unwrap();
        assert!(r.ampdu.is_none());
    }

    #[test]
    fn back_all_set() {
        let mut q = queue_of(&[R1; 4]);
        let a = q.build_ampdu(R1, 4, true, Selection::HeadOfLine, Access::unbounded(0), SimTime::ZERO).unwrap().ampdu.unwrap();
        let mut b = a.bitmap_template();
        (0..4).for_each(|i| b.set(i));
        let out = q.process_back(a, Some(&b), 7).unwrap();
        assert_eq!((out.acked.len(), out.retried, out.dropped.len()), (4, 0, 0));
        assert_eq!(q.occupancy(), 0);
    }

    #[test]
    fn back_partial_requeues_at_head_in_order() {
        let mut q = queue_of(&[R1, R1, R1, R1, R1]);
        let a = q.build_ampdu(R1, 4, true, Selection::HeadOfLine, Access::unbounded(0), SimTime::ZERO).unwrap().ampdu.unwrap();
        let mut b = a.bitmap_template();
        b.set(0);
        b.set(2);
        let out = q.process_back(a, Some(&b), 7).unwrap();
        assert_eq!((out.acked.len(), out.retried), (2, 2));
        let seqs: Vec<(u64, u8)> = q.iter().map(|m| (m.seq, m.retries)).collect();
        assert_eq!(seqs, vec![(1, 1), (3, 1), (4, 0)]);
    }

    #[test]
    fn retry_limit_drops() {
        let mut q = queue_of(&[R1]);
        for attempt in 0..=7u64 {
            let a = q
                .build_ampdu(R1, 4, true, Selection::HeadOfLine, Access::unbounded(attempt), SimTime::ZERO)
                .unwrap()
                .ampdu
                .unwrap();
            let out = q.process_back(a, None, 7).unwrap();
            if attempt < 7 {
                assert_eq!(out.retried, 1);
            } else {
                assert_eq!(out.dropped.len(), 1);
                assert_eq!(out.dropped[0].retries, 7);
            }
        }
        assert_eq!(q.occupancy(), 0);
    }

    #[test]
    fn mismatched_bitmap_is_error() {
        let mut q = queue_of(&[R1, R1]);
        let a = q.build_ampdu(R1, 4, true, Selection::HeadOfLine, Access::unbounded(0), SimTime::ZERO).unwrap().ampdu.unwrap();
        let b = BackBitmap {
            start_seq: 5,
            len: 2,
            received: 3,
        };
        assert!(q.process_back(a, Some(&b), 7).is_err());
    }

    #[test]
    fn addba_handshake() {
        let s = AddbaSession::default();
        let s = addba_step(s, AddbaEvent::SendRequest).unwrap();
        assert_eq!(s.state, AddbaState::Pending);
        let s = addba_step(s, AddbaEvent::RxResponse).unwrap();
        assert!(s.established());
        assert!(addba_step(s, AddbaEvent::SendRequest).is_err());
    }

    #[test]
    fn addba_gives_up_after_four_timeouts() {
        let mut s = AddbaSession::default();
        for k in 1..=4 {
            s = addba_step(s, AddbaEvent::SendRequest).unwrap();
            s = addba_step(s, AddbaEvent::Timeout).unwrap();
            assert_eq!(s.failures, k);
        }
        assert_eq!(s.state, AddbaState::Disabled);
        assert!(!s.wants_request(4));
        assert!(addba_step(s, AddbaEvent::SendRequest).is_err());
    }

    #[test]
    fn addba_timeout_when_idle_is_illegal() {
        assert!(addba_step(AddbaSession::default(), AddbaEvent::Timeout).is_err());
    }

    proptest! {
        // Conservation through arbitrary build/settle sequences.
        #[test]
        fn queue_conserves_mpdus(ops in proptest::collection::vec((0u8..16, 1usize..=4, any::<bool>()), 1..60)) {
            let mut ip = IpQueue::new(1000, 1);
            for i in 0..50 {
                ip.enqueue(pkt(i, if i % 3 == 0 { R2 } else { R1 }), 0);
            }
            let mut q = MacQueue::new(20, TTL);
            let (mut acked, mut dropped) = (0usize, 0usize);
            for (access, (bits, max, by_rx)) in ops.into_iter().enumerate() {
                q.transfer_from(&mut ip, SimTime::ZERO);
                let sel = if by_rx { Selection::ByReceiver } else { Selection::HeadOfLine };
                let r = q.build_ampdu(R1, max, true, sel, Access::unbounded(access as u64), SimTime::ZERO).unwrap();
                if let Some(a) = r.ampdu {
                    prop_assert!(a.len() <= max);
                    let mut b = a.bitmap_template();
                    b.received = bits & ((1u8 << a.len()) - 1);
                    let out = q.process_back(a, Some(&b), 2).unwrap();
                    acked += out.acked.len();
                    dropped += out.dropped.len();
                }
                prop_assert_eq!(q.in_flight(), 0);
                prop_assert!(q.occupancy() <= 20);
                prop_assert_eq!(acked + dropped + q.occupancy() + ip.len(), 50);
            }
        }
    }
}
