//! Block fading: one Rician draw per directed link per coherence interval.

use std::collections::BTreeMap;

use crate::ids::NodeId;
use crate::rng::{Purpose, RngStream};
use crate::time::{SimDuration, SimTime};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LinkId {
    pub from: NodeId,
    pub to: NodeId,
}

impl LinkId {
    fn owner(self) -> u64 {
        ((self.from.0 as u64) << 16) | self.to.0 as u64
    }
}

#[derive(Debug, Clone)]
pub struct FadingChannel {
    seed: u64,
    k_linear: f64,
    coherence: SimDuration,
    n_nodes: usize,
    cache: Vec<Option<(u64, f64)>>,
    record: Option<BTreeMap<(LinkId, u64), f64>>,
}

impl FadingChannel {
    pub fn new(seed: u64, k_linear: f64, coherence: SimDuration, n_nodes: usize) -> Self {
        FadingChannel {
            seed,
            k_linear,
            coherence,
            n_nodes,
            cache: vec![None; n_nodes * n_nodes],
            record: None,
        }
    }

    /// Keep every gain handed out, for cross-run comparison.
    pub fn enable_recording(&mut self) {
        self.record.get_or_insert_with(BTreeMap::new);
    }

    pub fn recorded(&self) -> Option<&BTreeMap<(LinkId, u64), f64>> {
        self.record.as_ref()
    }

    pub fn interval_index(&self, at: SimTime) -> u64 {
        at.as_nanos() / self.coherence.as_nanos().max(1)
    }

    /// Power gain in dB of `link` at time `at`. Depends only on seed, link and interval.
    pub fn gain_db(&mut self, link: LinkId, at: SimTime) -> f64 {
        if self.k_linear.is_infinite() {
            return 0.0;
        }
        let idx = self.interval_index(at);
        let slot = link.from.index() * self.n_nodes + link.to.index();
        let gain = match self.cache[slot] {
            Some((cached_idx, g)) if cached_idx == idx => g,
            _ => {
                let g = Self::draw(self.seed, link, idx, self.k_linear);
                self.cache[slot] = Some((idx, g));
                g
            }
        };
        if let Some(rec) = self.record.as_mut() {
            rec.insert((link, idx), gain);
        }
        gain
    }

    fn draw(seed: u64, link: LinkId, idx: u64, k_linear: f64) -> f64 {
        let mut s = RngStream::indexed(seed, link.owner(), Purpose::Fading, idx);
        20.0 * s.rician_envelope(k_linear).log10()
    }
}
