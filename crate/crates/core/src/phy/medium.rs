//! Shared wireless medium.
//!
//! The medium does not own the event queue. `start_tx` returns the arrival and
//! departure instants of the signal at every other node; the caller schedules them
//! and feeds them back through `arrive`/`depart`. Each node tracks the set of signals
//! currently on its antenna, which gives carrier sense (total power against the
//! threshold) and per-reception interference (peak instantaneous power of all other
//! signals while the wanted one was on air).

use std::collections::HashMap;

use serde::Serialize;

use super::channel::{FadingChannel, LinkId};
use super::{propagation_delay, RadioConfig};
use crate::error::SimError;
use crate::ids::NodeId;
use crate::rng::{db_to_linear, linear_to_db};
use crate::time::{SimDuration, SimTime};

pub type TxId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TxClass {
    Data,
    Control,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AttemptOutcome {
    Decodable { sinr_db: f64 },
    Lost,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReceptionOutcome {
    Decodable { sinr_db: f64 },
    Collision,
    /// The receiver transmitted while the frame was arriving.
    HalfDuplex,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BusyChange {
    None,
    BecameBusy,
    BecameIdle,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Arrival {
    pub node: NodeId,
    pub start: SimTime,
    pub end: SimTime,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TxPlan {
    pub id: TxId,
    pub end: SimTime,
    pub arrivals: Vec<Arrival>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TxRecord {
    pub id: TxId,
    pub sender: NodeId,
    pub receiver: NodeId,
    pub class: TxClass,
    pub start: SimTime,
    pub end: SimTime,
}

fn judge(power_mw: f64, interference_mw: f64, noise_mw: f64, capture_ratio: f64) -> AttemptOutcome {
    if interference_mw > 0.0 && power_mw < capture_ratio * interference_mw {
        return AttemptOutcome::Lost;
    }
    AttemptOutcome::Decodable {
        sinr_db: linear_to_db(power_mw / (noise_mw + interference_mw)),
    }
}

/// Outcome of a set of simultaneous attempts at one receiver: each attempt survives
/// only if it exceeds the sum of all others by the capture threshold.
pub fn resolve_reception(rx_dbm: &[f64], noise_dbm: f64, capture_threshold_db: f64) -> Vec<AttemptOutcome> {
    let powers: Vec<f64> = rx_dbm.iter().map(|&p| db_to_linear(p)).collect();
    let total: f64 = powers.iter().sum();
    let noise = db_to_linear(noise_dbm);
    let ratio = db_to_linear(capture_threshold_db);
    powers.iter().map(|&p| judge(p, (total - p).max(0.0), noise, ratio)).collect()
}

#[derive(Debug, Clone)]
struct Incoming {
    tx: TxId,
    power_mw: f64,
    peak_interference_mw: f64,
    corrupted: bool,
    wanted: bool,
}

#[derive(Debug, Clone, Default)]
struct NodeRadio {
    transmitting: Option<TxId>,
    incoming: Vec<Incoming>,
    busy: bool,
}

#[derive(Debug, Clone)]
struct Transmission {
    receiver: NodeId,
    power_at: Vec<f64>,
    pending: usize,
}

#[derive(Debug, Clone)]
pub struct Medium {
    n: usize,
    prop: Vec<SimDuration>,
    mean_rx_dbm: Vec<f64>,
    noise_mw: f64,
    capture_ratio: f64,
    cs_threshold_mw: f64,
    channel: FadingChannel,
    nodes: Vec<NodeRadio>,
    active: HashMap<TxId, Transmission>,
    next_id: TxId,
    on_air: usize,
    on_air_since: SimTime,
    busy_total: SimDuration,
    airtime_total: SimDuration,
    log: Option<Vec<TxRecord>>,
}

impl Medium {
    /// `positions` are metres along a line; index is the node id.
    pub fn new(cfg: &RadioConfig, positions: &[f64], seed: u64) -> Result<Self, SimError> {
        let n = positions.len();
        let mut prop = vec![SimDuration::ZERO; n * n];
        let mut mean_rx_dbm = vec![f64::NEG_INFINITY; n * n];
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let d = (positions[i] - positions[j]).abs();
                prop[i * n + j] = propagation_delay(d);
                mean_rx_dbm[i * n + j] = cfg.mean_rx_power_dbm(d)?;
            }
        }
        Ok(Medium {
            n,
            prop,
            mean_rx_dbm,
            noise_mw: db_to_linear(cfg.noise_floor_dbm()),
            capture_ratio: db_to_linear(cfg.capture_threshold_db),
            cs_threshold_mw: db_to_linear(cfg.cs_threshold_dbm),
            channel: FadingChannel::new(seed, cfg.rician_k_linear(), cfg.coherence_time(), n),
            nodes: vec![NodeRadio::default(); n],
            active: HashMap::new(),
            next_id: 0,
            on_air: 0,
            on_air_since: SimTime::ZERO,
            busy_total: SimDuration::ZERO,
            airtime_total: SimDuration::ZERO,
            log: None,
        })
    }

    pub fn enable_tx_log(&mut self) {
        self.log.get_or_insert_with(Vec::new);
    }

    pub fn tx_log(&self) -> Option<&[TxRecord]> {
        self.log.as_deref()
    }

    pub fn channel(&self) -> &FadingChannel {
        &self.channel
    }

    pub fn channel_mut(&mut self) -> &mut FadingChannel {
        &mut self.channel
    }

    pub fn propagation(&self, a: NodeId, b: NodeId) -> SimDuration {
        self.prop[a.index() * self.n + b.index()]
    }

    pub fn mean_rx_dbm(&self, from: NodeId, to: NodeId) -> f64 {
        self.mean_rx_dbm[from.index() * self.n + to.index()]
    }

    pub fn is_busy(&self, node: NodeId) -> bool {
        self.nodes[node.index()].busy
    }

    pub fn is_transmitting(&self, node: NodeId) -> bool {
        self.nodes[node.index()].transmitting.is_some()
    }

    /// Wall-clock time with at least one transmission on air (measured at senders).
    pub fn busy_time(&self, now: SimTime) -> SimDuration {
        let open = if self.on_air > 0 { now - self.on_air_since } else { SimDuration::ZERO };
        self.busy_total + open
    }

    /// Sum of the airtimes of every transmission started.
    pub fn airtime_total(&self) -> SimDuration {
        self.airtime_total
    }

    fn refresh_busy(&mut self, node: NodeId) -> BusyChange {
        let r = &mut self.nodes[node.index()];
        let power: f64 = r.incoming.iter().map(|s| s.power_mw).sum();
        let busy = r.transmitting.is_some() || power >= self.cs_threshold_mw;
        let change = match (r.busy, busy) {
            (false, true) => BusyChange::BecameBusy,
            (true, false) => BusyChange::BecameIdle,
            _ => BusyChange::None,
        };
        r.busy = busy;
        change
    }

    pub fn start_tx(
        &mut self,
        now: SimTime,
        sender: NodeId,
        receiver: NodeId,
        airtime: SimDuration,
        class: TxClass,
    ) -> Result<(TxPlan, BusyChange), SimError> {
        if sender.index() >= self.n || receiver.index() >= self.n || sender == receiver {
            return Err(SimError::InvalidParameter(format!("transmission {sender} -> {receiver}")));
        }
        if self.nodes[sender.index()].transmitting.is_some() {
            return Err(SimError::InvalidParameter(format!("{sender} is already transmitting")));
        }
        let id = self.next_id;
        self.next_id += 1;
        let end = now + airtime;

        let mut power_at = vec![0.0; self.n];
        let mut arrivals = Vec::with_capacity(self.n - 1);
        for j in 0..self.n {
            if j == sender.index() {
                continue;
            }
            let to = NodeId(j as u16);
            let fade = self.channel.gain_db(LinkId { from: sender, to }, now);
            power_at[j] = db_to_linear(self.mean_rx_dbm(sender, to) + fade);
            let delay = self.propagation(sender, to);
            arrivals.push(Arrival {
                node: to,
                start: now + delay,
                end: end + delay,
            });
        }
        self.active.insert(id, Transmission {
                receiver,
                power_at,
                pending: self.n - 1,
            },
        );

        let r = &mut self.nodes[sender.index()];
        r.transmitting = Some(id);
        for s in r.incoming.iter_mut() {
            s.corrupted = true;
        }
        if self.on_air == 0 {
            self.on_air_since = now;
        }
        self.on_air += 1;
        self.airtime_total += airtime;
        if let Some(log) = self.log.as_mut() {
            log.push(TxRecord {
                id,
                sender,
                receiver,
                class,
                start: now,
                end,
            });
        }
        let change = self.refresh_busy(sender);
        Ok((TxPlan { id, end, arrivals }, change))
    }

    pub fn end_tx(&mut self, now: SimTime, sender: NodeId, id: TxId) -> Result<BusyChange, SimError> {
        let r = &mut self.nodes[sender.index()];
        if r.transmitting != Some(id) {
            return Err(SimError::InvalidParameter(format!("{sender} is not sending tx {id}")));
        }
        r.transmitting = None;
        self.on_air -= 1;
        if self.on_air == 0 {
            self.busy_total += now - self.on_air_since;
        }
        Ok(self.refresh_busy(sender))
    }

    pub fn arrive(&mut self, node: NodeId, id: TxId) -> Result<BusyChange, SimError> {
        let tx = self
            .active
            .get(&id)
            .ok_or_else(|| SimError::InvalidParameter(format!("unknown tx {id}")))?;
        let power = tx.power_at[node.index()];
        let wanted = tx.receiver == node;
        let r = &mut self.nodes[node.index()];
        let mut others = 0.0;
        for s in r.incoming.iter_mut() {
            others += s.power_mw;
        }
        for s in r.incoming.iter_mut() {
            let interference = others - s.power_mw + power;
            if interference > s.peak_interference_mw {
                s.peak_interference_mw = interference;
            }
        }
        r.incoming.push(Incoming {
            tx: id,
            power_mw: power,
            peak_interference_mw: others,
            corrupted: r.transmitting.is_some(),
            wanted,
        });
        Ok(self.refresh_busy(node))
    }

    /// Removes the signal; returns the reception outcome if `node` was its addressee.
    pub fn depart(&mut self, node: NodeId, id: TxId) -> Result<(BusyChange, Option<ReceptionOutcome>), SimError> {
        let r = &mut self.nodes[node.index()];
        let pos = r
            .incoming
            .iter()
            .position(|s| s.tx == id)
            .ok_or_else(|| SimError::InvalidParameter(format!("tx {id} not present at {node}")))?;
        let sig = r.incoming.remove(pos);
        let outcome = sig.wanted.then(|| {
            if sig.corrupted {
                ReceptionOutcome::HalfDuplex
            } else {
                match judge(sig.power_mw, sig.peak_interference_mw, self.noise_mw, self.capture_ratio) {
                    AttemptOutcome::Decodable { sinr_db } => ReceptionOutcome::Decodable { sinr_db },
                    AttemptOutcome::Lost => ReceptionOutcome::Collision,
                }
            }
        });
        if let Some(tx) = self.active.get_mut(&id) {
            tx.pending -= 1;
            if tx.pending == 0 {
                self.active.remove(&id);
            }
        }
        Ok((self.refresh_busy(node), outcome))
    }

    pub fn noise_dbm(&self) -> f64 {
        linear_to_db(self.noise_mw)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_powers_both_lost() {
        let out = resolve_reception(&[-60.0, -60.0], -94.0, 10.0);
        assert!(out.iter().all(|o| *o == AttemptOutcome::Lost));
    }

    #[test]
    fn strong_signal_captures() {
        let out = resolve_reception(&[-50.0, -65.0], -94.0, 10.0);
        assert!(matches!(out[0], AttemptOutcome::Decodable { .. }));
        assert_eq!(out[1], AttemptOutcome::Lost);
        if let AttemptOutcome::Decodable { sinr_db } = out[0] {
            assert!((sinr_db - 15.0).abs() < 0.01);
        }
    }

    #[test]
    fn capture_uses_sum_of_others() {
        // 12 dB above each interferer, but only ~7 dB above their sum of three.
        let out = resolve_reception(&[-50.0, -62.0, -62.0, -62.0], -94.0, 10.0);
        assert!(out.iter().all(|o| *o == AttemptOutcome::Lost));
    }

    #[test]
    fn single_attempt_sees_only_noise() {
        let out = resolve_reception(&[-70.0], -94.0, 10.0);
        assert_eq!(out.len(), 1);
        match out[0] {
            AttemptOutcome::Decodable { sinr_db } => assert!((sinr_db - 24.0).abs() < 1e-9),
            _ => panic!(),
        }
    }

    fn medium(positions: &[f64]) -> Medium {
        let cfg = RadioConfig {
            fading: false,
            ..RadioConfig::default()
        };
        Medium::new(&cfg, positions, 1).unwrap()
    }

    fn deliver(m: &mut Medium, plan: &TxPlan) -> Vec<(NodeId, Option<ReceptionOutcome>)> {
        for a in &plan.arrivals {
            m.arrive(a.node, plan.id).unwrap();
        }
        plan.arrivals
            .iter()
            .map(|a| (a.node, m.depart(a.node, plan.id).unwrap().1))
            .collect()
    }

    #[test]
    fn lone_frame_is_decodable_and_carrier_sensed() {
        let mut m = medium(&[0.0, 500.0, 1000.0]);
        let air = SimDuration::from_micros(100);
        let (plan, change) = m.start_tx(SimTime::ZERO, NodeId(1), NodeId(0), air, TxClass::Data).unwrap();
        assert_eq!(change, BusyChange::BecameBusy);
        assert_eq!(plan.arrivals.len(), 2);
        assert_eq!(m.arrive(NodeId(2), plan.id).unwrap(), BusyChange::BecameBusy);
        assert!(m.is_busy(NodeId(2)));
        m.arrive(NodeId(0), plan.id).unwrap();
        let (_, out) = m.depart(NodeId(0), plan.id).unwrap();
        assert!(matches!(out, Some(ReceptionOutcome::Decodable { .. })));
        let (c, out) = m.depart(NodeId(2), plan.id).unwrap();
        assert_eq!(c, BusyChange::BecameIdle);
        assert!(out.is_none());
        assert_eq!(m.end_tx(plan.end, NodeId(1), plan.id).unwrap(), BusyChange::BecameIdle);
        assert_eq!(m.busy_time(plan.end), air);
    }

    #[test]
    fn arrival_times_include_propagation() {
        let mut m = medium(&[0.0, 4500.0]);
        let (plan, _) = m
            .start_tx(SimTime(1000), NodeId(0), NodeId(1), SimDuration::from_micros(50), TxClass::Control)
            .unwrap();
        assert_eq!(plan.arrivals[0].start, SimTime(1000 + 15_010));
        assert_eq!(plan.arrivals[0].end, SimTime(1000 + 50_000 + 15_010));
    }

    #[test]
    fn overlapping_equal_frames_collide() {
        let mut m = medium(&[0.0, 500.0, 500.0001]);
        let air = SimDuration::from_micros(100);
        let (p1, _) = m.start_tx(SimTime::ZERO, NodeId(1), NodeId(0), air, TxClass::Data).unwrap();
        let (p2, _) = m.start_tx(SimTime::ZERO, NodeId(2), NodeId(0), air, TxClass::Data).unwrap();
        m.arrive(NodeId(0), p1.id).unwrap();
        m.arrive(NodeId(0), p2.id).unwrap();
        assert_eq!(m.depart(NodeId(0), p1.id).unwrap().1, Some(ReceptionOutcome::Collision));
        assert_eq!(m.depart(NodeId(0), p2.id).unwrap().1, Some(ReceptionOutcome::Collision));
    }

    #[test]
    fn near_node_captures_over_far() {
        // 500 m vs 4500 m: ~19 dB apart.
        let mut m = medium(&[0.0, 500.0, 4500.0]);
        let air = SimDuration::from_micros(100);
        let (near, _) = m.start_tx(SimTime::ZERO, NodeId(1), NodeId(0), air, TxClass::Data).unwrap();
        let (far, _) = m.start_tx(SimTime::ZERO, NodeId(2), NodeId(0), air, TxClass::Data).unwrap();
        m.arrive(NodeId(0), far.id).unwrap();
        m.arrive(NodeId(0), near.id).unwrap();
        assert!(matches!(
            m.depart(NodeId(0), near.id).unwrap().1,
            Some(ReceptionOutcome::Decodable { .. })
        ));
        assert_eq!(m.depart(NodeId(0), far.id).unwrap().1, Some(ReceptionOutcome::Collision));
    }

    #[test]
    fn transmitting_receiver_loses_frame() {
        let mut m = medium(&[0.0, 500.0]);
        let air = SimDuration::from_micros(100);
        let (p, _) = m.start_tx(SimTime::ZERO, NodeId(1), NodeId(0), air, TxClass::Data).unwrap();
        m.arrive(NodeId(0), p.id).unwrap();
        m.start_tx(SimTime(10), NodeId(0), NodeId(1), air, TxClass::Control).unwrap();
        assert_eq!(m.depart(NodeId(0), p.id).unwrap().1, Some(ReceptionOutcome::HalfDuplex));
    }

    #[test]
    fn double_start_is_error() {
        let mut m = medium(&[0.0, 500.0]);
        let air = SimDuration::from_micros(100);
        m.start_tx(SimTime::ZERO, NodeId(1), NodeId(0), air, TxClass::Data).unwrap();
        assert!(m.start_tx(SimTime(1), NodeId(1), NodeId(0), air, TxClass::Data).is_err());
    }

    #[test]
    fn every_other_node_gets_one_arrival() {
        let mut m = medium(&[0.0, 500.0, 1000.0, 1500.0]);
        let (p, _) = m
            .start_tx(SimTime::ZERO, NodeId(2), NodeId(0), SimDuration::from_micros(10), TxClass::Data)
            .unwrap();
        let outs = deliver(&mut m, &p);
        assert_eq!(outs.len(), 3);
        assert_eq!(outs.iter().filter(|(_, o)| o.is_some()).count(), 1);
    }
}
