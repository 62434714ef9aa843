//! One simulation run: topology, traffic, queues, the chosen MAC and the medium.

use std::collections::{BTreeMap, HashMap, VecDeque};

use serde::Serialize;

use crate::config::{Directions, MacKind, ScenarioConfig};
use crate::dcf::{dcf_step, DcfAction, DcfEvent, DcfPhase, DcfState, DcfTiming};
use crate::error::{IllegalTransition, SimError};
use crate::ids::{FlowId, NodeId};
use crate::mac::{addba_step, Access, AddbaEvent, AddbaSession, Ampdu, BackBitmap, FrameKind, IpQueue, MacQueue, Mpdu, Packet};
use crate::metrics::FlowStats;
use crate::phy::airtime::{ampdu_airtime, control_airtime, mpdu_bits, ACK_BYTES, BACK_BYTES, MGMT_FRAME_BYTES};
use crate::phy::medium::{BusyChange, TxClass, TxId};
use crate::phy::{ErrorModel, LinkId, McsEntry, Medium, ReceptionOutcome};
use crate::rng::{Purpose, RngStream};
use crate::sim::{Event, EventHandle, Scheduler};
use crate::time::{SimDuration, SimTime};
use crate::token::{
    addba_timeout, back_timeout, compute_timeouts, fsm_step, RecoveryOutcome, TimerInputs, Timeouts, TokenAction,
    TokenEvent, TokenFsm, TokenGrant, TokenLocation, TokenManager, TokenRelease, TokenState,
};
use crate::traffic::{build_flows, Direction, FlowSpec};

const TRACE_TAIL: usize = 40;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Keep every trace line (otherwise only a short tail for error reports).
    pub trace: bool,
    pub record_fading: bool,
    pub frame_log: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameRecord {
    pub start: SimTime,
    pub end: SimTime,
    pub sender: NodeId,
    pub receiver: NodeId,
    pub kind: FrameKind,
    /// Payload sizes of a data aggregate; empty for control frames.
    pub payloads: Vec<u32>,
    /// Size of a control frame; zero for data.
    pub bytes: u32,
    pub rate_bps: u64,
}

impl FrameRecord {
    pub fn airtime(&self) -> SimDuration {
        if self.kind == FrameKind::Data {
            ampdu_airtime(&self.payloads, self.rate_bps).expect("logged aggregate is valid")
        } else {
            control_airtime(self.bytes, self.rate_bps)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct GrantRecord {
    pub at: SimTime,
    pub sta: NodeId,
    pub grant_seq: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RecoveryRecord {
    pub sta: NodeId,
    pub grant_seq: u64,
    pub granted_at: SimTime,
    pub reclaimed_at: SimTime,
    pub evicted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ForcedLoss {
    pub at: SimTime,
    pub kind: FrameKind,
    pub grant_seq: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TokenLog {
    pub grants: Vec<GrantRecord>,
    pub recoveries: Vec<RecoveryRecord>,
    pub forced_losses: Vec<ForcedLoss>,
    pub releases: u64,
    pub stale_releases: u64,
    pub token_loss_events: u64,
    pub evicted: Vec<NodeId>,
    pub timeouts: Option<Timeouts>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub mac: MacKind,
    pub seed: u64,
    pub flows: Vec<FlowSpec>,
    pub stats: Vec<FlowStats>,
    pub end: SimTime,
    pub events: u64,
    pub busy_time: SimDuration,
    pub airtime_total: SimDuration,
    pub frames: Option<Vec<FrameRecord>>,
    pub fading: Option<BTreeMap<(LinkId, u64), f64>>,
    pub token: Option<TokenLog>,
    pub trace: Vec<String>,
    pub addba_failures: u64,
    /// Oldest MAC-queue age of any MPDU at the moment it was sent.
    pub max_mpdu_age: SimDuration,
    pub slot: SimDuration,
    pub difs: SimDuration,
}

#[derive(Debug, Clone)]
enum Content {
    Data { payloads: Vec<u32>, start_seq: u64 },
    Back { bitmap: BackBitmap, for_tx: TxId },
    Grant(TokenGrant),
    Release(TokenRelease),
    Control,
}

#[derive(Debug, Clone)]
struct Frame {
    kind: FrameKind,
    sender: NodeId,
    content: Content,
    mcs: McsEntry,
    bytes: u32,
}

#[derive(Debug, Clone)]
enum Then {
    Nothing,
    ArmBack,
    ArmAddba { peer: NodeId },
    PollAfterSifs,
    CycleAfterSifs,
    SendAfterSifs(Outgoing),
    ReleaseSent,
    GrantSent,
    ResponseSent,
    ArmAck,
}

/// A contended management frame waiting for its acknowledgement (DCF only).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum AckFor {
    Request,
    Response,
}

#[derive(Debug)]
struct AckWait {
    tx: TxId,
    peer: NodeId,
    what: AckFor,
    timer: Option<EventHandle>,
}

#[derive(Debug, Clone)]
enum Outgoing {
    Back { to: NodeId, bitmap: BackBitmap, for_tx: TxId },
    Ack { to: NodeId, then: Box<Then> },
    AddbaResponse { to: NodeId },
}

#[derive(Debug, Clone)]
pub enum Ev {
    Packet { flow: u32, k: u64 },
    SigStart { tx: TxId },
    SigEnd { tx: TxId },
    TxEnd { tx: TxId },
    Send(Box<OutgoingEv>),
    Poll,
    BackTimeout { tx: TxId },
    AddbaTimeout { tx: TxId },
    AckTimeout { tx: TxId },
    Recovery { grant_seq: u64 },
    CycleStep,
    TokenLoss,
    Difs,
    Countdown,
}

/// Opaque wrapper so the event enum does not expose internal frame plumbing.
#[derive(Debug, Clone)]
pub struct OutgoingEv(Outgoing);

#[derive(Debug)]
struct Outstanding {
    tx: TxId,
    ampdu: Ampdu,
    data_rx_end: SimTime,
    timer: Option<EventHandle>,
}

#[derive(Debug)]
struct Node {
    ip: IpQueue,
    mac: MacQueue,
    addba: Vec<AddbaSession>,
    access: u64,
    /// When the current access began; later arrivals wait for the next one.
    access_began: SimTime,
    outstanding: Option<Outstanding>,
    addba_wait: Option<(NodeId, TxId, Option<EventHandle>)>,
    /// ADDBA responses still to be sent through contention, with attempts so far.
    mgmt: VecDeque<(NodeId, u32)>,
    ack_wait: Option<AckWait>,
    addba_holdoff: Vec<SimTime>,
    token: TokenFsm,
    grant_seq: Option<u64>,
    token_loss: Option<EventHandle>,
    dcf: DcfState,
    difs: Option<EventHandle>,
    countdown: Option<(EventHandle, SimTime)>,
    backoff_rng: RngStream,
}

impl Node {
    fn current_access(&self) -> Access {
        Access {
            id: self.access,
            arrived_by: self.access_began,
        }
    }
}

struct World<'a> {
    cfg: &'a ScenarioConfig,
    opts: RunOptions,
    medium: Medium,
    nodes: Vec<Node>,
    flows: Vec<FlowSpec>,
    next_seq: Vec<u64>,
    stats: Vec<FlowStats>,
    frames: HashMap<TxId, Frame>,
    then: HashMap<TxId, Then>,
    data_mcs: McsEntry,
    ctrl_mcs: McsEntry,
    error_model: ErrorModel,
    error_rngs: Vec<RngStream>,
    loss_rngs: Vec<RngStream>,
    timing: DcfTiming,
    timeouts: Timeouts,
    back_air: SimDuration,
    ctrl_air: SimDuration,
    ack_air: SimDuration,
    slack: SimDuration,
    mgr: Option<TokenManager>,
    serving: NodeId,
    grant_at: SimTime,
    recovery: Option<EventHandle>,
    log: TokenLog,
    tail: VecDeque<String>,
    full_trace: Vec<String>,
    frame_log: Option<Vec<FrameRecord>>,
    addba_failures: u64,
    max_age: SimDuration,
    end: SimTime,
}

fn illegal(node: NodeId, at: SimTime, e: IllegalTransition, tail: &VecDeque<String>) -> SimError {
    SimError::Protocol {
        node,
        at,
        detail: e.to_string(),
        trace_tail: tail.iter().cloned().collect(),
    }
}

impl<'a> World<'a> {
    fn new(cfg: &'a ScenarioConfig, seed: u64, opts: RunOptions) -> Result<Self, SimError> {
        let n = cfg.n_nodes;
        let mut medium = Medium::new(&cfg.radio, &cfg.positions(), seed)?;
        if opts.record_fading {
            medium.channel_mut().enable_recording();
        }
        let all = build_flows(n, cfg.rate.0, cfg.packet_bytes, SimDuration::from_secs_f64(cfg.start_window), seed);
        let flows: Vec<FlowSpec> = all
            .into_iter()
            .filter(|f| match cfg.directions {
                Directions::Both => true,
                Directions::Upstream => f.direction == Direction::Upstream,
                Directions::Downstream => f.direction == Direction::Downstream,
            })
            .enumerate()
            .map(|(i, f)| FlowSpec { id: FlowId(i as u32), ..f })
            .collect();
        let q = &cfg.queues;
        let ttl = SimDuration::from_millis(q.ttl_ms);
        let nodes = (0..n)
            .map(|i| {
                let id = NodeId(i as u16);
                let lanes = if id.is_ap() && q.per_flow_queues { n } else { 1 };
                Node {
                    ip: IpQueue::new(q.ip_capacity, lanes),
                    mac: MacQueue::new(q.mac_capacity, ttl),
                    addba: vec![AddbaSession::default(); n],
                    access: 0,
                    access_began: SimTime::ZERO,
                    outstanding: None,
                    addba_wait: None,
                    mgmt: VecDeque::new(),
                    ack_wait: None,
                    addba_holdoff: vec![SimTime::ZERO; n],
                    token: TokenFsm::default(),
                    grant_seq: None,
                    token_loss: None,
                    dcf: DcfState::new(cfg.dcf.cw_min),
                    difs: None,
                    countdown: None,
                    backoff_rng: RngStream::new(seed, i as u64, Purpose::Backoff),
                }
            })
            .collect();
        let data_mcs = cfg.radio.mcs(cfg.mcs)?;
        let ctrl_mcs = cfg.radio.mcs(cfg.radio.control_mcs)?;
        let timing = cfg.dcf.timing(cfg.max_distance());
        let slack = SimDuration::from_micros(cfg.token.timer_slack_us);
        let timeouts = compute_timeouts(&TimerInputs {
            sifs: timing.sifs,
            data_rate: data_mcs.phy_rate,
            control_rate: ctrl_mcs.phy_rate,
            payload_bytes: cfg.packet_bytes,
            credits: cfg.token.credits,
            max_ampdu: q.max_ampdu,
            max_distance_m: cfg.max_distance(),
            stations: n - 1,
            slack,
            recovery_margin: cfg.token.recovery_margin,
            token_loss_multiplier: cfg.token.token_loss_multiplier,
        });
        let mgr = (cfg.mac == MacKind::Token).then(|| {
            let eviction = (cfg.token.eviction_threshold > 0).then_some(cfg.token.eviction_threshold);
            TokenManager::new((1..n).map(|i| NodeId(i as u16)).collect(), cfg.token.weights.clone(), cfg.token.credits, eviction)
        });
        let error_rngs = (0..n * n)
            .map(|k| {
                let link = (((k / n) as u64) << 16) | (k % n) as u64;
                RngStream::new(seed, link, Purpose::ErrorDraw)
            })
            .collect();
        let loss_rngs = (0..n).map(|i| RngStream::new(seed, i as u64, Purpose::ForcedLoss)).collect();
        let n_flows = flows.len();
        Ok(World {
            cfg,
            opts,
            medium,
            nodes,
            flows,
            next_seq: vec![0; n_flows],
            stats: vec![FlowStats::default(); n_flows],
            frames: HashMap::new(),
            then: HashMap::new(),
            data_mcs,
            ctrl_mcs,
            error_model: ErrorModel {
                steepness: cfg.radio.error_steepness,
            },
            error_rngs,
            loss_rngs,
            timing,
            timeouts,
            back_air: control_airtime(BACK_BYTES, data_mcs.phy_rate),
            ctrl_air: control_airtime(MGMT_FRAME_BYTES, ctrl_mcs.phy_rate),
            ack_air: control_airtime(ACK_BYTES, ctrl_mcs.phy_rate),
            slack,
            mgr,
            serving: NodeId::AP,
            grant_at: SimTime::ZERO,
            recovery: None,
            log: TokenLog {
                timeouts: Some(timeouts),
                ..Default::default()
            },
            tail: VecDeque::with_capacity(TRACE_TAIL + 1),
            full_trace: Vec::new(),
            frame_log: opts.frame_log.then(Vec::new),
            addba_failures: 0,
            max_age: SimDuration::ZERO,
            end: SimTime::ZERO + cfg.duration(),
        })
    }

    fn is_token(&self) -> bool {
        self.cfg.mac == MacKind::Token
    }

    fn state_label(&self, node: NodeId) -> String {
        let n = &self.nodes[node.index()];
        if self.is_token() {
            format!("{:?}", n.token.state)
        } else {
            format!("{:?}", n.dcf.phase)
        }
    }

    fn trace(&mut self, now: SimTime, node: NodeId, action: impl FnOnce() -> String) {
        let line = format!("{now} {node} {} {}", self.state_label(node), action());
        if self.opts.trace {
            self.full_trace.push(line.clone());
        }
        if self.tail.len() == TRACE_TAIL {
            self.tail.pop_front();
        }
        self.tail.push_back(line);
    }

    fn protocol(&self, node: NodeId, at: SimTime, detail: impl Into<String>) -> SimError {
        SimError::Protocol {
            node,
            at,
            detail: detail.into(),
            trace_tail: self.tail.iter().cloned().collect(),
        }
    }

    fn rtt(&self, a: NodeId, b: NodeId) -> SimDuration {
        self.medium.propagation(a, b) * 2
    }

    fn has_data(&self, node: NodeId) -> bool {
        let n = &self.nodes[node.index()];
        n.mac.queued() > 0 || !n.ip.is_empty() || !n.mgmt.is_empty()
    }

    fn count_expired(&mut self, expired: Vec<Mpdu>) {
        for m in expired {
            self.stats[m.flow.index()].dropped_ttl += 1;
        }
    }

    fn refill(&mut self, node: NodeId, now: SimTime) {
        let n = &mut self.nodes[node.index()];
        n.mac.transfer_from(&mut n.ip, now);
    }

    // ---------------------------------------------------------------- transmission

    fn transmit(
        &mut self,
        sch: &mut Scheduler<Ev>,
        sender: NodeId,
        receiver: NodeId,
        kind: FrameKind,
        content: Content,
        then: Then,
    ) -> Result<Option<TxId>, SimError> {
        let now = sch.now();
        if self.medium.is_transmitting(sender) {
            self.trace(now, sender, || format!("skip {kind:?} (radio busy)"));
            return Ok(None);
        }
        let (airtime, mcs, bytes, payloads) = match (&content, kind) {
            (Content::Data { payloads, .. }, _) => (
                ampdu_airtime(payloads, self.data_mcs.phy_rate)?,
                self.data_mcs,
                0,
                payloads.clone(),
            ),
            (_, FrameKind::Back) => (self.back_air, self.data_mcs, BACK_BYTES, vec![]),
            (_, FrameKind::Ack) => (self.ack_air, self.ctrl_mcs, ACK_BYTES, vec![]),
            _ => (self.ctrl_air, self.ctrl_mcs, MGMT_FRAME_BYTES, vec![]),
        };
        let class = if kind == FrameKind::Data { TxClass::Data } else { TxClass::Control };
        let (plan, change) = self.medium.start_tx(now, sender, receiver, airtime, class)?;
        for a in &plan.arrivals {
            sch.schedule(a.start, a.node, Ev::SigStart { tx: plan.id })?;
            sch.schedule(a.end, a.node, Ev::SigEnd { tx: plan.id })?;
        }
        sch.schedule(plan.end, sender, Ev::TxEnd { tx: plan.id })?;
        if let Some(log) = self.frame_log.as_mut() {
            log.push(FrameRecord {
                start: now,
                end: plan.end,
                sender,
                receiver,
                kind,
                payloads: payloads.clone(),
                bytes,
                rate_bps: mcs.phy_rate,
            });
        }
        self.frames.insert(
            plan.id,
            Frame {
                kind,
                sender,
                content,
                mcs,
                bytes,
            },
        );
        self.then.insert(plan.id, then);
        self.trace(now, sender, || {
            if payloads.is_empty() {
                format!("tx {kind:?} -> {receiver}")
            } else {
                format!("tx {kind:?}x{} -> {receiver}", payloads.len())
            }
        });
        self.busy_change(sch, sender, change)?;
        Ok(Some(plan.id))
    }

    fn send_data(&mut self, sch: &mut Scheduler<Ev>, node: NodeId, ampdu: Ampdu) -> Result<(), SimError> {
        let now = sch.now();
        let receiver = ampdu.receiver;
        let flow = ampdu.mpdus[0].flow.index();
        let st = &mut self.stats[flow];
        st.ampdu_histogram[ampdu.len()] += 1;
        for m in &ampdu.mpdus {
            st.transmissions += 1;
            if m.retries > 0 {
                st.retransmissions += 1;
            }
            self.max_age = self.max_age.max(now.since(m.enqueued_at));
        }
        let content = Content::Data {
            payloads: ampdu.payloads(),
            start_seq: ampdu.mpdus[0].seq,
        };
        let data_air = ampdu_airtime(&ampdu.payloads(), self.data_mcs.phy_rate)?;
        let data_rx_end = now + data_air + self.medium.propagation(node, receiver);
        match self.transmit(sch, node, receiver, FrameKind::Data, content, Then::ArmBack)? {
            Some(tx) => {
                self.nodes[node.index()].outstanding = Some(Outstanding {
                    tx,
                    ampdu,
                    data_rx_end,
                    timer: None,
                });
                Ok(())
            }
            None => Err(self.protocol(node, now, "data transmission while radio busy")),
        }
    }

    fn send_addba_request(&mut self, sch: &mut Scheduler<Ev>, node: NodeId, peer: NodeId) -> Result<(), SimError> {
        let now = sch.now();
        let s = self.nodes[node.index()].addba[peer.index()];
        self.nodes[node.index()].addba[peer.index()] =
            addba_step(s, AddbaEvent::SendRequest).map_err(|e| illegal(node, now, e, &self.tail))?;
        let sent = self.transmit(
            sch,
            node,
            peer,
            FrameKind::AddbaRequest,
            Content::Control,
            Then::ArmAddba { peer },
        )?;
        if sent.is_none() {
            return Err(self.protocol(node, now, "ADDBA request while radio busy"));
        }
        Ok(())
    }

    fn schedule_out(&mut self, sch: &mut Scheduler<Ev>, node: NodeId, out: Outgoing) -> Result<(), SimError> {
        sch.schedule_in(self.timing.sifs, node, Ev::Send(Box::new(OutgoingEv(out))))?;
        Ok(())
    }

    fn on_send(&mut self, sch: &mut Scheduler<Ev>, node: NodeId, out: Outgoing) -> Result<(), SimError> {
        let (to, kind, content, then) = match out {
            Outgoing::Back { to, bitmap, for_tx } => (to, FrameKind::Back, Content::Back { bitmap, for_tx }, Then::Nothing),
            Outgoing::Ack { to, then } => (to, FrameKind::Ack, Content::Control, *then),
            Outgoing::AddbaResponse { to } => {
                let then = if self.is_token() { Then::ResponseSent } else { Then::Nothing };
                (to, FrameKind::AddbaResponse, Content::Control, then)
            }
        };
        if self.transmit(sch, node, to, kind, content, then.clone())?.is_none() {
            // A response that cannot go out still has to unblock its state machine.
            match then {
                Then::ResponseSent | Then::PollAfterSifs | Then::CycleAfterSifs => {
                    return Err(self.protocol(node, sch.now(), format!("{kind:?} response while radio busy")));
                }
                _ => {}
            }
        }
        Ok(())
    }

    fn on_tx_end(&mut self, sch: &mut Scheduler<Ev>, node: NodeId, tx: TxId) -> Result<(), SimError> {
        let change = self.medium.end_tx(sch.now(), node, tx)?;
        self.busy_change(sch, node, change)?;
        let then = self.then.remove(&tx).unwrap_or(Then::Nothing);
        match then {
            Then::ArmBack => {
                let peer = match &self.nodes[node.index()].outstanding {
                    Some(o) if o.tx == tx => o.ampdu.receiver,
                    _ => return Err(self.protocol(node, sch.now(), "BACK timer without outstanding aggregate")),
                };
                let wait = back_timeout(self.timing.sifs, self.back_air, self.rtt(node, peer), self.slack);
                let h = sch.schedule_in(wait, node, Ev::BackTimeout { tx })?;
                if let Some(o) = self.nodes[node.index()].outstanding.as_mut() {
                    o.timer = Some(h);
                }
                if !self.is_token() {
                    self.dcf(sch, node, DcfEvent::TxEnd)?;
                }
            }
            Then::ArmAddba { peer } => {
                let wait = addba_timeout(self.timing.sifs, self.ack_air, self.ctrl_air, self.rtt(node, peer), self.slack);
                let h = sch.schedule_in(wait, node, Ev::AddbaTimeout { tx })?;
                self.nodes[node.index()].addba_wait = Some((peer, tx, Some(h)));
                if !self.is_token() {
                    self.dcf(sch, node, DcfEvent::TxEnd)?;
                }
            }
            Then::ArmAck => {
                let peer = match &self.nodes[node.index()].ack_wait {
                    Some(w) if w.tx == tx => w.peer,
                    _ => return Err(self.protocol(node, sch.now(), "ACK timer without pending frame")),
                };
                let wait = self.timing.sifs + self.ack_air + self.rtt(node, peer) + self.slack;
                let h = sch.schedule_in(wait, node, Ev::AckTimeout { tx })?;
                if let Some(w) = self.nodes[node.index()].ack_wait.as_mut() {
                    w.timer = Some(h);
                }
                self.dcf(sch, node, DcfEvent::TxEnd)?;
            }
            other => self.after_tx(sch, node, other)?,
        }
        Ok(())
    }

    fn after_tx(&mut self, sch: &mut Scheduler<Ev>, node: NodeId, then: Then) -> Result<(), SimError> {
        let now = sch.now();
        match then {
            Then::Nothing | Then::ArmBack | Then::ArmAddba { .. } | Then::ArmAck => {}
            Then::PollAfterSifs => {
                sch.schedule_in(self.timing.sifs, node, Ev::Poll)?;
            }
            Then::CycleAfterSifs => {
                sch.schedule_in(self.timing.sifs, node, Ev::CycleStep)?;
            }
            Then::SendAfterSifs(out) => self.schedule_out(sch, node, out)?,
            Then::ReleaseSent | Then::GrantSent => {
                self.token_step(node, now, TokenEvent::ReleaseSent)?;
                if !node.is_ap() {
                    let h = sch.schedule_in(self.timeouts.sta_token_loss, node, Ev::TokenLoss)?;
                    self.nodes[node.index()].token_loss = Some(h);
                }
            }
            Then::ResponseSent => {
                self.token_step(node, now, TokenEvent::AddbaResponseSent)?;
            }
        }
        Ok(())
    }

    // ---------------------------------------------------------------- reception

    fn on_sig_end(&mut self, sch: &mut Scheduler<Ev>, node: NodeId, tx: TxId) -> Result<(), SimError> {
        let now = sch.now();
        let (change, outcome) = self.medium.depart(node, tx)?;
        self.busy_change(sch, node, change)?;
        let Some(outcome) = outcome else { return Ok(()) };
        let frame = self
            .frames
            .remove(&tx)
            .ok_or_else(|| self.protocol(node, now, format!("no frame for tx {tx}")))?;
        let sinr_db = match outcome {
            ReceptionOutcome::Decodable { sinr_db } => sinr_db,
            other => {
                self.trace(now, node, || format!("lost {:?} from {} ({other:?})", frame.kind, frame.sender));
                return Ok(());
            }
        };
        let link = frame.sender.index() * self.cfg.n_nodes + node.index();
        if let Content::Data { payloads, start_seq } = &frame.content {
            let mut bitmap = BackBitmap {
                start_seq: *start_seq,
                len: payloads.len() as u8,
                received: 0,
            };
            for (i, &p) in payloads.iter().enumerate() {
                let per = self.error_model.frame_error_probability(sinr_db, &frame.mcs, mpdu_bits(p));
                if self.error_rngs[link].unit() >= per {
                    bitmap.set(i);
                }
            }
            self.heard(frame.sender);
            if self.is_token() {
                self.token_step(node, now, TokenEvent::DataRx)?;
            }
            self.trace(now, node, || format!("rx Data {}/{} from {}", bitmap.count(), payloads.len(), frame.sender));
            if bitmap.count() > 0 {
                self.schedule_out(
                    sch,
                    node,
                    Outgoing::Back {
                        to: frame.sender,
                        bitmap,
                        for_tx: tx,
                    },
                )?;
            }
            return Ok(());
        }

        let per = self
            .error_model
            .frame_error_probability(sinr_db, &frame.mcs, frame.bytes as u64 * 8);
        if self.error_rngs[link].unit() < per {
            self.trace(now, node, || format!("corrupt {:?} from {}", frame.kind, frame.sender));
            return Ok(());
        }
        let p_loss = self.cfg.token.forced_token_loss;
        if p_loss > 0.0 && matches!(frame.kind, FrameKind::TokenGrant | FrameKind::TokenRelease) {
            if self.loss_rngs[node.index()].unit() < p_loss {
                let grant_seq = match &frame.content {
                    Content::Grant(g) => g.grant_seq,
                    Content::Release(r) => r.grant_seq,
                    _ => 0,
                };
                self.log.forced_losses.push(ForcedLoss {
                    at: now,
                    kind: frame.kind,
                    grant_seq,
                });
                self.trace(now, node, || format!("forced loss of {:?}", frame.kind));
                return Ok(());
            }
        }
        self.heard(frame.sender);
        self.trace(now, node, || format!("rx {:?} from {}", frame.kind, frame.sender));
        match frame.content {
            Content::Back { bitmap, for_tx } => {
                let matches = self.nodes[node.index()].outstanding.as_ref().is_some_and(|o| o.tx == for_tx);
                if matches {
                    self.settle(sch, node, Some(bitmap))?;
                }
            }
            Content::Grant(g) => self.on_grant(sch, node, g)?,
            Content::Release(r) => self.on_release(sch, node, r)?,
            Content::Control => match frame.kind {
                FrameKind::AddbaRequest => self.on_addba_request(sch, node, frame.sender)?,
                FrameKind::AddbaResponse => self.on_addba_response(sch, node, frame.sender)?,
                FrameKind::Ack => self.on_ack(sch, node, frame.sender)?,
                _ => {}
            },
            Content::Data { .. } => unreachable!("handled above"),
        }
        Ok(())
    }

    fn heard(&mut self, from: NodeId) {
        if let Some(m) = self.mgr.as_mut() {
            m.heard_from(from);
        }
    }

    fn settle(&mut self, sch: &mut Scheduler<Ev>, node: NodeId, bitmap: Option<BackBitmap>) -> Result<(), SimError> {
        let now = sch.now();
        let retry_limit = self.cfg.queues.retry_limit;
        let n = &mut self.nodes[node.index()];
        let Some(out) = n.outstanding.take() else {
            return Err(self.protocol(node, now, "settle without outstanding aggregate"));
        };
        if let Some(h) = out.timer {
            sch.cancel(h);
        }
        let total = out.ampdu.len();
        let res = n.mac.process_back(out.ampdu, bitmap.as_ref(), retry_limit)?;
        n.mac.transfer_from(&mut n.ip, now);
        for m in &res.acked {
            let st = &mut self.stats[m.flow.index()];
            st.delivered += 1;
            st.delay_sum_ns += out.data_rx_end.since(m.created_at).as_nanos() as u128;
            st.delay_count += 1;
        }
        for m in &res.dropped {
            self.stats[m.flow.index()].dropped_retry += 1;
        }
        let acked = res.acked.len();
        self.trace(now, node, || format!("settle {acked}/{total} acked, {} dropped", res.dropped.len()));
        if self.is_token() {
            let ev = if bitmap.is_some() { TokenEvent::BackRx } else { TokenEvent::BackTimeout };
            let delay = if bitmap.is_some() { self.timing.sifs } else { SimDuration::ZERO };
            let actions = self.token_step(node, now, ev)?;
            self.token_actions(sch, node, actions, delay)?;
        } else {
            let ev = DcfEvent::Outcome {
                success: acked == total,
                dropped: !res.dropped.is_empty(),
                more: self.has_data(node),
                medium_busy: self.medium.is_busy(node),
            };
            self.dcf(sch, node, ev)?;
        }
        Ok(())
    }

    fn on_addba_request(&mut self, sch: &mut Scheduler<Ev>, node: NodeId, from: NodeId) -> Result<(), SimError> {
        let now = sch.now();
        if self.is_token() {
            self.token_step(node, now, TokenEvent::AddbaRequestRx)?;
            let then = Box::new(Then::SendAfterSifs(Outgoing::AddbaResponse { to: from }));
            return self.schedule_out(sch, node, Outgoing::Ack { to: from, then });
        }
        // Under contention the response is a frame of its own that must win the medium.
        let n = &mut self.nodes[node.index()];
        if !n.mgmt.iter().any(|&(p, _)| p == from) {
            n.mgmt.push_back((from, 0));
        }
        self.schedule_out(
            sch,
            node,
            Outgoing::Ack {
                to: from,
                then: Box::new(Then::Nothing),
            },
        )?;
        if self.nodes[node.index()].dcf.phase == DcfPhase::Idle {
            let busy = self.medium.is_busy(node);
            self.dcf(sch, node, DcfEvent::QueueNonEmpty { medium_busy: busy })?;
        }
        Ok(())
    }

    fn on_addba_response(&mut self, sch: &mut Scheduler<Ev>, node: NodeId, from: NodeId) -> Result<(), SimError> {
        let now = sch.now();
        let n = &mut self.nodes[node.index()];
        let waiting = matches!(n.addba_wait, Some((peer, _, _)) if peer == from);
        if waiting {
            if let Some((_, _, Some(h))) = n.addba_wait.take() {
                sch.cancel(h);
            }
            let s = n.addba[from.index()];
            n.addba[from.index()] =
                addba_step(s, AddbaEvent::RxResponse).map_err(|e| illegal(node, now, e, &self.tail))?;
        }
        let then = if self.is_token() {
            if !waiting {
                return Ok(());
            }
            self.token_step(node, now, TokenEvent::AddbaResponseRx)?;
            Then::PollAfterSifs
        } else {
            Then::Nothing
        };
        self.schedule_out(
            sch,
            node,
            Outgoing::Ack {
                to: from,
                then: Box::new(then),
            },
        )
    }

    fn send_mgmt(&mut self, sch: &mut Scheduler<Ev>, node: NodeId, peer: NodeId, what: AckFor) -> Result<(), SimError> {
        let kind = match what {
            AckFor::Request => FrameKind::AddbaRequest,
            AckFor::Response => FrameKind::AddbaResponse,
        };
        match self.transmit(sch, node, peer, kind, Content::Control, Then::ArmAck)? {
            Some(tx) => {
                self.nodes[node.index()].ack_wait = Some(AckWait {
                    tx,
                    peer,
                    what,
                    timer: None,
                });
                Ok(())
            }
            None => Err(self.protocol(node, sch.now(), format!("{kind:?} while radio busy"))),
        }
    }

    fn on_ack(&mut self, sch: &mut Scheduler<Ev>, node: NodeId, from: NodeId) -> Result<(), SimError> {
        if self.is_token() {
            return Ok(());
        }
        let n = &mut self.nodes[node.index()];
        let matches = n.ack_wait.as_ref().is_some_and(|w| w.peer == from && w.timer.is_some());
        if !matches {
            return Ok(());
        }
        let w = n.ack_wait.take().expect("checked");
        if let Some(h) = w.timer {
            sch.cancel(h);
        }
        match w.what {
            AckFor::Request => {
                let wait = SimDuration::from_micros(self.cfg.dcf.addba_response_timeout_us);
                let h = sch.schedule_in(wait, node, Ev::AddbaTimeout { tx: w.tx })?;
                self.nodes[node.index()].addba_wait = Some((w.peer, w.tx, Some(h)));
            }
            AckFor::Response => {
                self.nodes[node.index()].mgmt.pop_front();
            }
        }
        let ev = DcfEvent::Outcome {
            success: true,
            dropped: false,
            more: self.has_data(node),
            medium_busy: self.medium.is_busy(node),
        };
        self.dcf(sch, node, ev)
    }

    fn on_ack_timeout(&mut self, sch: &mut Scheduler<Ev>, node: NodeId, tx: TxId) -> Result<(), SimError> {
        let now = sch.now();
        let retry_limit = self.cfg.queues.retry_limit as u32;
        let n = &mut self.nodes[node.index()];
        if !n.ack_wait.as_ref().is_some_and(|w| w.tx == tx) {
            return Ok(());
        }
        let w = n.ack_wait.take().expect("checked");
        let mut dropped = false;
        match w.what {
            AckFor::Request => {
                // Unacknowledged request: back to idle, tried again at the next access.
                n.addba[w.peer.index()] = AddbaSession::default();
            }
            AckFor::Response => {
                if let Some(front) = n.mgmt.front_mut() {
                    front.1 += 1;
                    if front.1 >= retry_limit {
                        n.mgmt.pop_front();
                        dropped = true;
                    }
                }
            }
        }
        self.trace(now, node, || format!("ACK timeout for {:?} to {}", w.what, w.peer));
        let ev = DcfEvent::Outcome {
            success: false,
            dropped,
            more: self.has_data(node),
            medium_busy: self.medium.is_busy(node),
        };
        self.dcf(sch, node, ev)
    }

    fn on_addba_timeout(&mut self, sch: &mut Scheduler<Ev>, node: NodeId, tx: TxId) -> Result<(), SimError> {
        let now = sch.now();
        let n = &mut self.nodes[node.index()];
        let peer = match n.addba_wait {
            Some((peer, t, _)) if t == tx => peer,
            _ => return Ok(()),
        };
        n.addba_wait = None;
        let s = n.addba[peer.index()];
        n.addba[peer.index()] = addba_step(s, AddbaEvent::Timeout).map_err(|e| illegal(node, now, e, &self.tail))?;
        self.addba_failures += 1;
        self.trace(now, node, || format!("ADDBA timeout to {peer}"));
        if self.is_token() {
            let actions = self.token_step(node, now, TokenEvent::AddbaTimeout)?;
            self.token_actions(sch, node, actions, SimDuration::ZERO)?;
        } else {
            // No permanent give-up under contention: hold off, then ask again.
            let n = &mut self.nodes[node.index()];
            n.addba[peer.index()] = AddbaSession::default();
            n.addba_holdoff[peer.index()] = now + SimDuration::from_millis(self.cfg.dcf.addba_holdoff_ms);
        }
        Ok(())
    }

    // ---------------------------------------------------------------- token MAC

    fn token_step(&mut self, node: NodeId, now: SimTime, ev: TokenEvent) -> Result<Vec<TokenAction>, SimError> {
        let s = self.nodes[node.index()].token;
        let (next, actions) = fsm_step(s, ev).map_err(|e| illegal(node, now, e, &self.tail))?;
        self.nodes[node.index()].token = next;
        Ok(actions)
    }

    /// Runs the follow-ups of a token transition; polls happen after `poll_delay`.
    fn token_actions(
        &mut self,
        sch: &mut Scheduler<Ev>,
        node: NodeId,
        actions: Vec<TokenAction>,
        poll_delay: SimDuration,
    ) -> Result<(), SimError> {
        for a in actions {
            match a {
                TokenAction::Poll => {
                    sch.schedule_in(poll_delay, node, Ev::Poll)?;
                }
                TokenAction::SendRelease { credits_used } => self.release_token(sch, node, credits_used)?,
                other => {
                    return Err(self.protocol(node, sch.now(), format!("unexpected token action {other:?}")));
                }
            }
        }
        Ok(())
    }

    fn release_token(&mut self, sch: &mut Scheduler<Ev>, node: NodeId, credits_used: u32) -> Result<(), SimError> {
        let now = sch.now();
        if node.is_ap() {
            let sta = self.serving;
            let mgr = self.mgr.as_mut().expect("token mode");
            let grant = mgr.grant(sta).map_err(|e| illegal(node, now, e, &self.tail))?;
            self.log.grants.push(GrantRecord {
                at: now,
                sta,
                grant_seq: grant.grant_seq,
            });
            self.grant_at = now;
            let h = sch.schedule_in(
                self.timeouts.recovery,
                node,
                Ev::Recovery {
                    grant_seq: grant.grant_seq,
                },
            )?;
            self.recovery = Some(h);
            if self
                .transmit(sch, node, sta, FrameKind::TokenGrant, Content::Grant(grant), Then::GrantSent)?
                .is_none()
            {
                return Err(self.protocol(node, now, "grant while radio busy"));
            }
        } else {
            let grant_seq = self.nodes[node.index()].grant_seq.unwrap_or(0);
            let release = TokenRelease {
                from: node,
                credits_used,
                grant_seq,
            };
            if self
                .transmit(
                    sch,
                    node,
                    NodeId::AP,
                    FrameKind::TokenRelease,
                    Content::Release(release),
                    Then::ReleaseSent,
                )?
                .is_none()
            {
                return Err(self.protocol(node, now, "release while radio busy"));
            }
        }
        Ok(())
    }

    fn on_poll(&mut self, sch: &mut Scheduler<Ev>, node: NodeId) -> Result<(), SimError> {
        let now = sch.now();
        self.refill(node, now);
        let receiver = if node.is_ap() { self.serving } else { NodeId::AP };
        let q = &self.cfg.queues;
        let n = &self.nodes[node.index()];
        let access = n.current_access();
        let eligible = n.mac.eligible(receiver, q.selection, access, now);
        let session = n.addba[receiver.index()];
        let usable = eligible.min(q.max_ampdu).min(n.token.credits_left as usize);
        let ev = TokenEvent::Poll {
            eligible,
            max_ampdu: q.max_ampdu,
            want_addba: session.wants_request(usable),
        };
        let actions = self.token_step(node, now, ev)?;
        for a in actions {
            match a {
                TokenAction::SendAmpdu { count } => {
                    let n = &mut self.nodes[node.index()];
                    let aggregate = n.addba[receiver.index()].established();
                    let built = n
                        .mac
                        .build_ampdu(receiver, count, aggregate, q.selection, access, now)?;
                    self.count_expired(built.expired);
                    let Some(ampdu) = built.ampdu else {
                        return Err(self.protocol(node, now, "eligible MPDUs vanished"));
                    };
                    // Without a session only one MPDU goes out; the unused credits stay.
                    let unused = count - ampdu.len();
                    let n = &mut self.nodes[node.index()];
                    n.token.credits_left += unused as u32;
                    n.token.credits_used -= unused as u32;
                    n.token.pending = ampdu.len();
                    self.send_data(sch, node, ampdu)?;
                }
                TokenAction::SendAddbaRequest => self.send_addba_request(sch, node, receiver)?,
                TokenAction::SendRelease { credits_used } => self.release_token(sch, node, credits_used)?,
                other => return Err(self.protocol(node, now, format!("unexpected poll action {other:?}"))),
            }
        }
        Ok(())
    }

    fn on_grant(&mut self, sch: &mut Scheduler<Ev>, node: NodeId, g: TokenGrant) -> Result<(), SimError> {
        let now = sch.now();
        let n = &mut self.nodes[node.index()];
        if n.grant_seq.is_some_and(|s| g.grant_seq <= s) {
            return Ok(());
        }
        if n.token.state != TokenState::Tokenless {
            return Err(self.protocol(node, now, format!("grant {} while holding the token", g.grant_seq)));
        }
        n.grant_seq = Some(g.grant_seq);
        n.access += 1;
        n.access_began = now;
        if let Some(h) = n.token_loss.take() {
            sch.cancel(h);
        }
        let actions = self.token_step(node, now, TokenEvent::GrantRx { credits: g.credits })?;
        for a in actions {
            if a == TokenAction::SendAck {
                self.schedule_out(
                    sch,
                    node,
                    Outgoing::Ack {
                        to: NodeId::AP,
                        then: Box::new(Then::PollAfterSifs),
                    },
                )?;
            }
        }
        Ok(())
    }

    fn on_release(&mut self, sch: &mut Scheduler<Ev>, node: NodeId, r: TokenRelease) -> Result<(), SimError> {
        let mgr = self.mgr.as_mut().expect("token mode");
        if !mgr.on_release(&r) {
            self.log.stale_releases += 1;
            return Ok(());
        }
        self.log.releases += 1;
        if let Some(h) = self.recovery.take() {
            sch.cancel(h);
        }
        self.schedule_out(
            sch,
            node,
            Outgoing::Ack {
                to: r.from,
                then: Box::new(Then::CycleAfterSifs),
            },
        )
    }

    fn on_cycle_step(&mut self, sch: &mut Scheduler<Ev>) -> Result<(), SimError> {
        let now = sch.now();
        let ap = NodeId::AP;
        let mgr = self.mgr.as_mut().expect("token mode");
        if mgr.location() != TokenLocation::AtAp {
            return Err(self.protocol(ap, now, "cycle step while the token is out"));
        }
        let credits = mgr.credits();
        let Some(sta) = mgr.next_station() else {
            sch.schedule_in(SimDuration::from_millis(1), ap, Ev::CycleStep)?;
            return Ok(());
        };
        self.serving = sta;
        let n = &mut self.nodes[ap.index()];
        n.access += 1;
        n.access_began = now;
        self.trace(now, ap, || format!("serve {sta}"));
        let actions = self.token_step(ap, now, TokenEvent::Acquire { credits })?;
        if actions.contains(&TokenAction::Poll) {
            self.on_poll(sch, ap)?;
        }
        Ok(())
    }

    fn on_recovery(&mut self, sch: &mut Scheduler<Ev>, grant_seq: u64) -> Result<(), SimError> {
        let now = sch.now();
        let mgr = self.mgr.as_mut().expect("token mode");
        let outcome = mgr.on_recovery_timeout(grant_seq);
        let (sta, evicted) = match outcome {
            RecoveryOutcome::Stale => return Ok(()),
            RecoveryOutcome::Reclaimed { sta, .. } => (sta, false),
            RecoveryOutcome::Evicted { sta } => (sta, true),
        };
        self.recovery = None;
        if evicted {
            self.log.evicted.push(sta);
        }
        self.log.recoveries.push(RecoveryRecord {
            sta,
            grant_seq,
            granted_at: self.grant_at,
            reclaimed_at: now,
            evicted,
        });
        self.trace(now, NodeId::AP, || format!("recover token from {sta}{}", if evicted { " (evicted)" } else { "" }));
        if self.nodes[0].token.state != TokenState::Tokenless {
            return Err(self.protocol(NodeId::AP, now, "recovery while the AP is busy"));
        }
        sch.schedule_in(SimDuration::ZERO, NodeId::AP, Ev::CycleStep)?;
        Ok(())
    }

    // ---------------------------------------------------------------- DCF

    fn busy_change(&mut self, sch: &mut Scheduler<Ev>, node: NodeId, change: BusyChange) -> Result<(), SimError> {
        if self.is_token() {
            return Ok(());
        }
        let ev = match change {
            BusyChange::None => return Ok(()),
            BusyChange::BecameIdle => DcfEvent::MediumIdle,
            BusyChange::BecameBusy => {
                let elapsed = match self.nodes[node.index()].countdown {
                    Some((_, start)) => (sch.now().since(start).as_nanos() / self.timing.slot.as_nanos()) as u32,
                    None => 0,
                };
                DcfEvent::MediumBusy { elapsed_slots: elapsed }
            }
        };
        self.dcf(sch, node, ev)
    }

    fn dcf(&mut self, sch: &mut Scheduler<Ev>, node: NodeId, ev: DcfEvent) -> Result<(), SimError> {
        let now = sch.now();
        let timing = self.timing;
        let n = &mut self.nodes[node.index()];
        let (next, actions) =
            dcf_step(n.dcf, ev, &timing, &mut n.backoff_rng).map_err(|e| illegal(node, now, e, &self.tail))?;
        n.dcf = next;
        for a in actions {
            let n = &mut self.nodes[node.index()];
            match a {
                DcfAction::StartDifs => n.difs = Some(sch.schedule_in(timing.difs, node, Ev::Difs)?),
                DcfAction::CancelDifs => {
                    if let Some(h) = n.difs.take() {
                        sch.cancel(h);
                    }
                }
                DcfAction::StartCountdown { slots } => {
                    let h = sch.schedule_in(timing.slot * slots as u64, node, Ev::Countdown)?;
                    n.countdown = Some((h, now));
                }
                DcfAction::CancelCountdown => {
                    if let Some((h, _)) = n.countdown.take() {
                        sch.cancel(h);
                    }
                }
                DcfAction::Transmit => self.dcf_transmit(sch, node)?,
                DcfAction::AwaitResponse => {}
            }
        }
        Ok(())
    }

    fn dcf_transmit(&mut self, sch: &mut Scheduler<Ev>, node: NodeId) -> Result<(), SimError> {
        let now = sch.now();
        self.refill(node, now);
        let q = &self.cfg.queues;
        let n = &mut self.nodes[node.index()];
        n.access += 1;
        n.access_began = now;
        if let Some(&(peer, _)) = n.mgmt.front() {
            return self.send_mgmt(sch, node, peer, AckFor::Response);
        }
        let receiver = if node.is_ap() { n.mac.head_receiver(now) } else { Some(NodeId::AP) };
        let mut built = None;
        if let Some(rx) = receiver {
            let eligible = n.mac.eligible(rx, q.selection, n.current_access(), now);
            let session = n.addba[rx.index()];
            if session.wants_request(eligible.min(q.max_ampdu)) && now >= n.addba_holdoff[rx.index()] {
                n.addba[rx.index()] =
                    addba_step(session, AddbaEvent::SendRequest).map_err(|e| illegal(node, now, e, &self.tail))?;
                return self.send_mgmt(sch, node, rx, AckFor::Request);
            }
            let r = n
                .mac
                .build_ampdu(rx, q.max_ampdu, session.established(), q.selection, n.current_access(), now)?;
            built = r.ampdu;
            self.count_expired(r.expired);
        }
        match built {
            Some(ampdu) => self.send_data(sch, node, ampdu),
            None => {
                // Everything queued had expired: give the opportunity back.
                let expired = self.nodes[node.index()].mac.expire(now);
                self.count_expired(expired);
                self.refill(node, now);
                self.dcf(sch, node, DcfEvent::TxEnd)?;
                let ev = DcfEvent::Outcome {
                    success: true,
                    dropped: false,
                    more: self.has_data(node),
                    medium_busy: self.medium.is_busy(node),
                };
                self.dcf(sch, node, ev)
            }
        }
    }

    // ---------------------------------------------------------------- traffic

    fn on_packet(&mut self, sch: &mut Scheduler<Ev>, flow: u32, k: u64) -> Result<(), SimError> {
        let now = sch.now();
        let f = self.flows[flow as usize];
        let sender = f.sender();
        self.stats[flow as usize].generated += 1;
        let seq = self.next_seq[flow as usize];
        self.next_seq[flow as usize] += 1;
        let lane = if sender.is_ap() { f.station.index() } else { 0 };
        let packet = Packet {
            flow: f.id,
            seq,
            receiver: f.receiver(),
            payload_bytes: f.packet_bytes,
            created_at: now,
        };
        if !self.nodes[sender.index()].ip.enqueue(packet, lane) {
            self.stats[flow as usize].dropped_ip += 1;
        }
        self.refill(sender, now);
        let next = f.arrival(k + 1);
        if next <= self.end {
            sch.schedule(next, sender, Ev::Packet { flow, k: k + 1 })?;
        }
        if !self.is_token() && self.nodes[sender.index()].dcf.phase == DcfPhase::Idle && self.has_data(sender) {
            let busy = self.medium.is_busy(sender);
            self.dcf(sch, sender, DcfEvent::QueueNonEmpty { medium_busy: busy })?;
        }
        Ok(())
    }

    // ---------------------------------------------------------------- driver

    fn handle(&mut self, sch: &mut Scheduler<Ev>, ev: Event<Ev>) -> Result<(), SimError> {
        let node = ev.target;
        match ev.payload {
            Ev::Packet { flow, k } => self.on_packet(sch, flow, k),
            Ev::SigStart { tx } => {
                let change = self.medium.arrive(node, tx)?;
                self.busy_change(sch, node, change)
            }
            Ev::SigEnd { tx } => self.on_sig_end(sch, node, tx),
            Ev::TxEnd { tx } => self.on_tx_end(sch, node, tx),
            Ev::Send(out) => self.on_send(sch, node, out.0),
            Ev::Poll => self.on_poll(sch, node),
            Ev::BackTimeout { tx } => {
                let live = self.nodes[node.index()].outstanding.as_ref().is_some_and(|o| o.tx == tx);
                if live {
                    self.trace(sch.now(), node, || "BACK timeout".into());
                    self.settle(sch, node, None)?;
                }
                Ok(())
            }
            Ev::AddbaTimeout { tx } => self.on_addba_timeout(sch, node, tx),
            Ev::AckTimeout { tx } => self.on_ack_timeout(sch, node, tx),
            Ev::Recovery { grant_seq } => self.on_recovery(sch, grant_seq),
            Ev::CycleStep => self.on_cycle_step(sch),
            Ev::TokenLoss => {
                self.log.token_loss_events += 1;
                self.trace(sch.now(), node, || "token loss timer".into());
                let h = sch.schedule_in(self.timeouts.sta_token_loss, node, Ev::TokenLoss)?;
                self.nodes[node.index()].token_loss = Some(h);
                Ok(())
            }
            Ev::Difs => {
                self.nodes[node.index()].difs = None;
                self.dcf(sch, node, DcfEvent::DifsElapsed)
            }
            Ev::Countdown => {
                self.nodes[node.index()].countdown = None;
                self.dcf(sch, node, DcfEvent::CountdownDone)
            }
        }
    }

    fn start(&mut self, sch: &mut Scheduler<Ev>) -> Result<(), SimError> {
        for f in &self.flows {
            let first = f.arrival(1);
            if first <= self.end {
                sch.schedule(first, f.sender(), Ev::Packet { flow: f.id.0, k: 1 })?;
            }
        }
        if self.is_token() && self.end > SimTime::ZERO {
            sch.schedule(SimTime::ZERO, NodeId::AP, Ev::CycleStep)?;
            for i in 1..self.cfg.n_nodes {
                let id = NodeId(i as u16);
                let h = sch.schedule_in(self.timeouts.sta_token_loss, id, Ev::TokenLoss)?;
                self.nodes[i].token_loss = Some(h);
            }
        }
        Ok(())
    }

    fn finish(mut self, sch: &Scheduler<Ev>, seed: u64) -> RunOutput {
        for n in &self.nodes {
            for p in n.ip.iter() {
                self.stats[p.flow.index()].queued_at_end += 1;
            }
            for m in n.mac.iter() {
                self.stats[m.flow.index()].queued_at_end += 1;
            }
            if let Some(o) = &n.outstanding {
                for m in &o.ampdu.mpdus {
                    self.stats[m.flow.index()].queued_at_end += 1;
                }
            }
        }
        let now = sch.now();
        RunOutput {
            mac: self.cfg.mac,
            seed,
            flows: self.flows,
            stats: self.stats,
            end: now,
            events: sch.processed(),
            busy_time: self.medium.busy_time(now),
            airtime_total: self.medium.airtime_total(),
            frames: self.frame_log,
            fading: self.medium.channel().recorded().cloned(),
            token: (self.cfg.mac == MacKind::Token).then_some(self.log),
            trace: if self.opts.trace { self.full_trace } else { Vec::new() },
            addba_failures: self.addba_failures,
            max_mpdu_age: self.max_age,
            slot: self.timing.slot,
            difs: self.timing.difs,
        }
    }
}

/// Runs one scenario with one seed.
pub fn run_scenario(cfg: &ScenarioConfig, seed: u64, opts: RunOptions) -> Result<RunOutput, SimError> {
    cfg.validate().map_err(|e| SimError::InvalidParameter(e.to_string()))?;
    let mut world = World::new(cfg, seed, opts)?;
    let mut sch = Scheduler::new();
    world.start(&mut sch)?;
    let end = world.end;
    sch.run_until(end, |sch, ev| world.handle(sch, ev))?;
    Ok(world.finish(&sch, seed))
}
