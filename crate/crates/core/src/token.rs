//! Token-passing MAC: the per-node state machine and the AP-side token manager.

use serde::Serialize;

use crate::error::IllegalTransition;
use crate::ids::NodeId;
use crate::phy::airtime::{control_airtime, ampdu_airtime, ACK_BYTES, BACK_BYTES, MGMT_FRAME_BYTES};
use crate::phy::propagation_delay;
use crate::time::SimDuration;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TokenState {
    Tokenless,
    Ready,
    WaitDataAck,
    Releasing,
    Management,
    WaitBaResp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenFsm {
    pub state: TokenState,
    pub credits_left: u32,
    pub credits_used: u32,
    /// Length of the aggregate awaiting its BACK.
    pub pending: usize,
}

impl Default for TokenFsm {
    fn default() -> Self {
        TokenFsm {
            state: TokenState::Tokenless,
            credits_left: 0,
            credits_used: 0,
            pending: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenEvent {
    /// Grant received over the air (acknowledged).
    GrantRx { credits: u32 },
    /// The AP takes the token for its own downstream turn.
    Acquire { credits: u32 },
    /// Decide the next step while holding the token.
    Poll {
        eligible: usize,
        max_ampdu: usize,
        want_addba: bool,
    },
    BackRx,
    BackTimeout,
    ReleaseSent,
    AddbaRequestRx,
    AddbaResponseSent,
    AddbaResponseRx,
    AddbaTimeout,
    DataRx,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenAction {
    SendAck,
    SendAmpdu { count: usize },
    SendAddbaRequest,
    SendAddbaResponse,
    /// For the AP this is the grant to the next station.
    SendRelease { credits_used: u32 },
    SendBack,
    Poll,
}

/// Pure transition function of the token state machine.
pub fn fsm_step(s: TokenFsm, ev: TokenEvent) -> Result<(TokenFsm, Vec<TokenAction>), IllegalTransition> {
    use TokenAction as A;
    use TokenEvent as E;
    use TokenState::*;

    let release = |s: TokenFsm| {
        (
            TokenFsm {
                state: Releasing,
                credits_left: 0,
                pending: 0,
                ..s
            },
            vec![A::SendRelease {
                credits_used: s.credits_used,
            }],
        )
    };

    let out = match (s.state, ev) {
        (Tokenless, E::GrantRx { credits }) | (Tokenless, E::Acquire { credits }) => {
            let next = TokenFsm {
                state: Ready,
                credits_left: credits,
                credits_used: 0,
                pending: 0,
            };
            let action = if matches!(ev, E::GrantRx { .. }) { A::SendAck } else { A::Poll };
            (next, vec![action])
        }
        (
            Ready,
            E::Poll {
                eligible,
                max_ampdu,
                want_addba,
            },
        ) => {
            if s.credits_left == 0 || eligible == 0 {
                release(s)
            } else if want_addba {
                (TokenFsm { state: WaitBaResp, ..s }, vec![A::SendAddbaRequest])
            } else {
                let count = eligible.min(max_ampdu.max(1)).min(s.credits_left as usize);
                let next = TokenFsm {
                    state: WaitDataAck,
                    credits_left: s.credits_left - count as u32,
                    credits_used: s.credits_used + count as u32,
                    pending: count,
                };
                (next, vec![A::SendAmpdu { count }])
            }
        }
        (WaitDataAck, E::BackRx) | (WaitDataAck, E::BackTimeout) => {
            if s.credits_left > 0 {
                (TokenFsm { state: Ready, pending: 0, ..s }, vec![A::Poll])
            } else {
                release(s)
            }
        }
        (Releasing, E::ReleaseSent) => (TokenFsm::default(), vec![]),
        (Tokenless, E::AddbaRequestRx) => (
            TokenFsm { state: Management, ..s },
            vec![A::SendAck, A::SendAddbaResponse],
        ),
        (Management, E::AddbaResponseSent) => (TokenFsm { state: Tokenless, ..s }, vec![]),
        (WaitBaResp, E::AddbaResponseRx) => (TokenFsm { state: Ready, ..s }, vec![A::SendAck, A::Poll]),
        (WaitBaResp, E::AddbaTimeout) => (TokenFsm { state: Ready, ..s }, vec![A::Poll]),
        (Tokenless, E::DataRx) | (Management, E::DataRx) => (s, vec![A::SendBack]),
        _ => return Err(IllegalTransition::new(s.state, ev)),
    };
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TokenLocation {
    AtAp,
    GrantedTo { sta: NodeId, grant_seq: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenGrant {
    pub to: NodeId,
    pub credits: u32,
    pub grant_seq: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenRelease {
    pub from: NodeId,
    pub credits_used: u32,
    pub grant_seq: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecoveryOutcome {
    Reclaimed { sta: NodeId, suspect_count: u32 },
    Evicted { sta: NodeId },
    /// The timer belonged to a grant that was already settled.
    Stale,
}

#[derive(Debug, Clone)]
pub struct TokenManager {
    associated: Vec<NodeId>,
    weights: Vec<u32>,
    cursor: usize,
    repeats_left: u32,
    round: u64,
    credits: u32,
    location: TokenLocation,
    next_grant_seq: u64,
    suspect: Vec<u32>,
    eviction_threshold: Option<u32>,
}

impl TokenManager {
    /// `weights[i]` is the number of turns station `stations[i]` gets per round.
    pub fn new(stations: Vec<NodeId>, weights: Vec<u32>, credits: u32, eviction_threshold: Option<u32>) -> Self {
        let weights = if weights.len() == stations.len() {
            weights.into_iter().map(|w| w.max(1)).collect()
        } else {
            vec![1; stations.len()]
        };
        let max_id = stations.iter().map(|s| s.index()).max().unwrap_or(0);
        TokenManager {
            repeats_left: weights.first().copied().unwrap_or(1),
            associated: stations,
            weights,
            cursor: 0,
            round: 0,
            credits,
            location: TokenLocation::AtAp,
            next_grant_seq: 0,
            suspect: vec![0; max_id + 1],
            eviction_threshold,
        }
    }

    pub fn associated(&self) -> &[NodeId] {
        &self.associated
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn location(&self) -> TokenLocation {
        self.location
    }

    pub fn credits(&self) -> u32 {
        self.credits
    }

    /// Next station in round-robin order; `None` when nobody is associated.
    pub fn next_station(&mut self) -> Option<NodeId> {
        if self.associated.is_empty() {
            return None;
        }
        let sta = self.associated[self.cursor];
        self.repeats_left -= 1;
        if self.repeats_left == 0 {
            self.cursor += 1;
            if self.cursor == self.associated.len() {
                self.cursor = 0;
                self.round += 1;
            }
            self.repeats_left = self.weights[self.cursor];
        }
        Some(sta)
    }

    pub fn grant(&mut self, to: NodeId) -> Result<TokenGrant, IllegalTransition> {
        if self.location != TokenLocation::AtAp {
            return Err(IllegalTransition::new(self.location, "grant"));
        }
        let grant_seq = self.next_grant_seq;
        self.next_grant_seq += 1;
        self.location = TokenLocation::GrantedTo { sta: to, grant_seq };
        Ok(TokenGrant {
            to,
            credits: self.credits,
            grant_seq,
        })
    }

    /// Accepts the release of the outstanding grant; stale releases return false.
    pub fn on_release(&mut self, r: &TokenRelease) -> bool {
        match self.location {
            TokenLocation::GrantedTo { sta, grant_seq } if sta == r.from && grant_seq == r.grant_seq => {
                self.location = TokenLocation::AtAp;
                self.suspect[sta.index()] = 0;
                true
            }
            _ => false,
        }
    }

    /// Anything heard from a station clears its suspicion.
    pub fn heard_from(&mut self, sta: NodeId) {
        if let Some(c) = self.suspect.get_mut(sta.index()) {
            *c = 0;
        }
    }

    pub fn on_recovery_timeout(&mut self, grant_seq: u64) -> RecoveryOutcome {
        let sta = match self.location {
            TokenLocation::GrantedTo { sta, grant_seq: g } if g == grant_seq => sta,
            _ => return RecoveryOutcome::Stale,
        };
        self.location = TokenLocation::AtAp;
        let count = &mut self.suspect[sta.index()];
        *count += 1;
        let count = *count;
        if self.eviction_threshold.is_some_and(|k| count >= k) {
            self.evict(sta);
            return RecoveryOutcome::Evicted { sta };
        }
        RecoveryOutcome::Reclaimed {
            sta,
            suspect_count: count,
        }
    }

    fn evict(&mut self, sta: NodeId) {
        if let Some(pos) = self.associated.iter().position(|&s| s == sta) {
            self.associated.remove(pos);
            self.weights.remove(pos);
            if pos < self.cursor {
                self.cursor -= 1;
            }
            if self.cursor >= self.associated.len() {
                self.cursor = 0;
            }
            self.repeats_left = self.weights.get(self.cursor).copied().unwrap_or(1);
        }
    }
}

/// Inputs to the timer formulas.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimerInputs {
    pub sifs: SimDuration,
    pub data_rate: u64,
    pub control_rate: u64,
    pub payload_bytes: u32,
    pub credits: u32,
    pub max_ampdu: usize,
    pub max_distance_m: f64,
    pub stations: usize,
    pub slack: SimDuration,
    pub recovery_margin: f64,
    pub token_loss_multiplier: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Timeouts {
    /// AP waits this long after starting a grant before reclaiming the token.
    pub recovery: SimDuration,
    /// Worst-case token hold of one station, excluding the grant itself.
    pub hold_max: SimDuration,
    /// After the end of an A-MPDU, at the largest distance.
    pub back: SimDuration,
    /// After the end of an ADDBA request, at the largest distance.
    pub addba: SimDuration,
    pub sta_token_loss: SimDuration,
}

/// BACK wait measured from the end of the aggregate on a link with round-trip `rtt`.
pub fn back_timeout(sifs: SimDuration, back_air: SimDuration, rtt: SimDuration, slack: SimDuration) -> SimDuration {
    sifs + back_air + rtt + slack
}

/// Response wait measured from the end of an ADDBA request.
pub fn addba_timeout(
    sifs: SimDuration,
    ack_air: SimDuration,
    response_air: SimDuration,
    rtt: SimDuration,
    slack: SimDuration,
) -> SimDuration {
    sifs + ack_air + sifs + response_air + rtt + slack
}

fn scale(d: SimDuration, f: f64) -> SimDuration {
    SimDuration((d.as_nanos() as f64 * f).round() as u64)
}

pub fn compute_timeouts(t: &TimerInputs) -> Timeouts {
    let rtt = propagation_delay(t.max_distance_m) * 2;
    let ctrl = control_airtime(MGMT_FRAME_BYTES, t.control_rate);
    let ctrl_ack = control_airtime(ACK_BYTES, t.control_rate);
    let back_air = control_airtime(BACK_BYTES, t.data_rate);
    let one = ampdu_airtime(&[t.payload_bytes], t.data_rate).expect("single MPDU is valid");
    let full = ampdu_airtime(&vec![t.payload_bytes; t.max_ampdu.clamp(1, 4)], t.data_rate)
        .expect("aggregate within limit");

    let back = back_timeout(t.sifs, back_air, rtt, t.slack);
    let addba = addba_timeout(t.sifs, ctrl_ack, ctrl, rtt, t.slack);
    // Request, wait, then acknowledge a response that arrived right at the deadline.
    let addba_worst = ctrl + addba + t.sifs + ctrl_ack + t.sifs;
    // Each credit can cost at most one single-MPDU aggregate plus a full BACK wait.
    let per_credit = one + back + t.sifs;
    let hold_max = t.sifs + ctrl_ack + t.sifs + addba_worst + per_credit * t.credits as u64 + ctrl;
    let recovery = scale(ctrl + rtt + hold_max, t.recovery_margin);

    // A typical turn: full aggregate each way with BACKs, plus the token exchange.
    let data_leg = full + t.sifs + back_air + rtt + t.sifs;
    let token_leg = ctrl + ctrl_ack + ctrl + ctrl_ack + t.sifs * 4 + rtt * 2;
    let round = (data_leg * 2 + token_leg) * t.stations.max(1) as u64;
    Timeouts {
        recovery,
        hold_max,
        back,
        addba,
        sta_token_loss: scale(round, t.token_loss_multiplier),
    }
}
