//! Constant-bit-rate flows.

use serde::{Deserialize, Serialize};

use crate::error::SimError;
use crate::ids::{FlowId, NodeId};
use crate::rng::{Purpose, RngStream};
use crate::time::{SimDuration, SimTime};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Downstream,
    Upstream,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Downstream => "downstream",
            Direction::Upstream => "upstream",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FlowSpec {
    pub id: FlowId,
    pub direction: Direction,
    pub station: NodeId,
    pub rate_bps: u64,
    pub packet_bytes: u32,
    pub start_at: SimTime,
}

impl FlowSpec {
    pub fn sender(&self) -> NodeId {
        match self.direction {
            Direction::Downstream => NodeId::AP,
            Direction::Upstream => self.station,
        }
    }

    pub fn receiver(&self) -> NodeId {
        match self.direction {
            Direction::Downstream => self.station,
            Direction::Upstream => NodeId::AP,
        }
    }

    /// Packet spacing, rounded to the nearest nanosecond.
    pub fn interval(&self) -> SimDuration {
        let bits = self.packet_bytes as u128 * 8;
        let ns = (bits * 1_000_000_000 + self.rate_bps as u128 / 2) / self.rate_bps as u128;
        SimDuration(ns as u64)
    }

    /// Time of the `k`-th packet, `k >= 1`.
    pub fn arrival(&self, k: u64) -> SimTime {
        self.start_at + self.interval() * k
    }

    /// Packets generated up to and including `end`.
    pub fn packets_until(&self, end: SimTime) -> u64 {
        if end <= self.start_at {
            return 0;
        }
        (end - self.start_at).as_nanos() / self.interval().as_nanos()
    }
}

/// Arrival instants of a flow within `[start, end]`.
pub fn cbr_schedule(flow: &FlowSpec, end: SimTime) -> Result<impl Iterator<Item = SimTime> + '_, SimError> {
    if flow.rate_bps == 0 {
        return Err(SimError::InvalidParameter(format!("flow {} has zero rate", flow.id)));
    }
    let n = flow.packets_until(end);
    Ok((1..=n).map(move |k| flow.arrival(k)))
}

/// One downstream and one upstream flow per station; flow `2(i-1)` is downstream to
/// station `i` and `2(i-1)+1` upstream from it. Start offsets are uniform in
/// `[0, max_start)`, drawn from a stream keyed by the flow id.
pub fn build_flows(n_nodes: usize, rate_bps: u64, packet_bytes: u32, max_start: SimDuration, seed: u64) -> Vec<FlowSpec> {
    let mut flows = Vec::with_capacity(2 * n_nodes.saturating_sub(1));
    for sta in 1..n_nodes {
        for direction in [Direction::Downstream, Direction::Upstream] {
            let id = FlowId(flows.len() as u32);
            let mut s = RngStream::new(seed, id.0 as u64, Purpose::TrafficStart);
            let start = SimDuration::from_secs_f64(s.uniform(0.0, max_start.as_secs_f64()));
            flows.push(FlowSpec {
                id,
                direction,
                station: NodeId(sta as u16),
                rate_bps,
                packet_bytes,
                start_at: SimTime(start.as_nanos()),
            });
        }
    }
    flows
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flow(rate: u64, start: SimTime) -> FlowSpec {
        FlowSpec {
            id: FlowId(0),
            direction: Direction::Upstream,
            station: NodeId(1),
            rate_bps: rate,
            packet_bytes: 512,
            start_at: start,
        }
    }

    #[test]
    fn intervals() {
        assert_eq!(flow(1_000_000, SimTime::ZERO).interval(), SimDuration::from_nanos(4_096_000));
        assert_eq!(flow(2_000_000, SimTime::ZERO).interval(), SimDuration::from_nanos(2_048_000));
    }

    #[test]
    fn five_hundred_seconds_count() {
        // floor(500 / 0.004096) computed independently.
        let expected = (500.0f64 / 0.004096).floor() as u64;
        let f = flow(1_000_000, SimTime::ZERO);
        let end = SimTime::from_secs_f64(500.0);
        assert_eq!(expected, 122_070);
        assert_eq!(f.packets_until(end), expected);
        assert_eq!(cbr_schedule(&f, end).unwrap().count() as u64, expected);
    }

    #[test]
    fn schedule_is_periodic_after_start() {
        let f = flow(1_000_000, SimTime(1_234));
        let ts: Vec<SimTime> = cbr_schedule(&f, SimTime(20_000_000)).unwrap().collect();
        assert_eq!(ts[0], SimTime(1_234 + 4_096_000));
        assert!(ts.windows(2).all(|w| w[1] - w[0] == SimDuration::from_nanos(4_096_000)));
    }

    #[test]
    fn zero_rate_is_error() {
        assert!(cbr_schedule(&flow(0, SimTime::ZERO), SimTime(10)).is_err());
    }

    #[test]
    fn flows_cover_both_directions() {
        let flows = build_flows(10, 1_000_000, 512, SimDuration::from_millis(2000), 5);
        assert_eq!(flows.len(), 18);
        assert!(flows.iter().all(|f| f.start_at < SimTime::from_secs_f64(2.0)));
        assert_eq!(flows[2].station, NodeId(2));
        assert_eq!(flows[3].direction, Direction::Upstream);
        assert_eq!(flows[3].sender(), NodeId(2));
        let again = build_flows(10, 1_000_000, 512, SimDuration::from_millis(2000), 5);
        assert_eq!(flows, again);
    }
}
