//! Per-flow counters and derived statistics.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::traffic::Direction;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct FlowStats {
    pub generated: u64,
    pub delivered: u64,
    pub dropped_ip: u64,
    pub dropped_ttl: u64,
    pub dropped_retry: u64,
    /// MPDU transmissions, first attempts included.
    pub transmissions: u64,
    pub retransmissions: u64,
    /// Aggregates sent, indexed by length (index 0 unused).
    pub ampdu_histogram: [u64; 5],
    pub delay_sum_ns: u128,
    pub delay_count: u64,
    /// Left in IP or MAC queues (or in flight) when the run ended.
    pub queued_at_end: u64,
}

impl FlowStats {
    /// `generated = delivered + drops + queued`.
    pub fn conserved(&self) -> bool {
        self.generated == self.delivered + self.dropped_ip + self.dropped_ttl + self.dropped_retry + self.queued_at_end
    }

    pub fn loss_ratio(&self) -> Option<f64> {
        (self.generated > 0).then(|| 1.0 - self.delivered as f64 / self.generated as f64)
    }

    pub fn retransmission_fraction(&self) -> Option<f64> {
        (self.transmissions > 0).then(|| self.retransmissions as f64 / self.transmissions as f64)
    }
}

/// `delivered / generated * rate`.
pub fn throughput(stats: &FlowStats, rate_bps: u64) -> Option<f64> {
    (stats.generated > 0).then(|| stats.delivered as f64 / stats.generated as f64 * rate_bps as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Aggregation {
    pub mean_mpdus_per_ampdu: f64,
    pub non_aggregated_fraction: f64,
}

pub fn aggregation_efficiency(stats: &FlowStats) -> Option<Aggregation> {
    let total: u64 = stats.ampdu_histogram.iter().sum();
    if total == 0 {
        return None;
    }
    let mpdus: u64 = stats.ampdu_histogram.iter().enumerate().map(|(len, &c)| len as u64 * c).sum();
    Some(Aggregation {
        mean_mpdus_per_ampdu: mpdus as f64 / total as f64,
        non_aggregated_fraction: stats.ampdu_histogram[1] as f64 / total as f64,
    })
}

/// Mean delay of delivered packets, in nanoseconds.
pub fn delay_stats(stats: &FlowStats) -> Option<f64> {
    (stats.delay_count > 0).then(|| stats.delay_sum_ns as f64 / stats.delay_count as f64)
}

/// `(sum x)^2 / (n * sum x^2)`.
pub fn jain_index(xs: &[f64]) -> Option<f64> {
    let sq: f64 = xs.iter().map(|x| x * x).sum();
    if xs.is_empty() || sq == 0.0 {
        return None;
    }
    let s: f64 = xs.iter().sum();
    Some(s * s / (xs.len() as f64 * sq))
}

/// One flow's result within one run, as fed to `summarize`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowResult {
    pub mac: String,
    pub seed: u64,
    pub direction: Direction,
    pub rate_bps: u64,
    pub stats: FlowStats,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub mac: String,
    pub direction: Direction,
    pub flows: usize,
    pub mean_throughput_bps: f64,
    pub total_throughput_bps: f64,
    pub loss_ratio: f64,
    pub mean_delay_ns: Option<f64>,
    pub mean_ampdu: Option<f64>,
    pub non_agg_frac: Option<f64>,
    pub retx_frac: Option<f64>,
    pub jain: Option<f64>,
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Per-(mac, direction) aggregates across flows and seeds. The total is the mean per
/// seed of the summed flow throughputs; Jain's index is averaged over seeds.
pub fn summarize(results: &[FlowResult]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(String, Direction), Vec<&FlowResult>> = BTreeMap::new();
    for r in results {
        groups.entry((r.mac.clone(), r.direction)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((mac, direction), rs)| {
            let tputs: Vec<f64> = rs.iter().filter_map(|r| throughput(&r.stats, r.rate_bps)).collect();
            let mut per_seed: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
            for r in &rs {
                if let Some(t) = throughput(&r.stats, r.rate_bps) {
                    per_seed.entry(r.seed).or_default().push(t);
                }
            }
            let totals: Vec<f64> = per_seed.values().map(|v| v.iter().sum()).collect();
            let jains: Vec<f64> = per_seed.values().filter_map(|v| jain_index(v)).collect();
            let generated: u64 = rs.iter().map(|r| r.stats.generated).sum();
            let delivered: u64 = rs.iter().map(|r| r.stats.delivered).sum();
            let mut merged = FlowStats::default();
            for r in &rs {
                merged.transmissions += r.stats.transmissions;
                merged.retransmissions += r.stats.retransmissions;
                merged.delay_sum_ns += r.stats.delay_sum_ns;
                merged.delay_count += r.stats.delay_count;
                for i in 0..5 {
                    merged.ampdu_histogram[i] += r.stats.ampdu_histogram[i];
                }
            }
            let agg = aggregation_efficiency(&merged);
            SummaryRow {
                mac,
                direction,
                flows: rs.len(),
                mean_throughput_bps: mean(&tputs).unwrap_or(0.0),
                total_throughput_bps: mean(&totals).unwrap_or(0.0),
                loss_ratio: if generated > 0 { 1.0 - delivered as f64 / generated as f64 } else { 0.0 },
                mean_delay_ns: delay_stats(&merged),
                mean_ampdu: agg.map(|a| a.mean_mpdus_per_ampdu),
                non_agg_frac: agg.map(|a| a.non_aggregated_fraction),
                retx_frac: merged.retransmission_fraction(),
                jain: mean(&jains),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn throughput_formula() {
        let s = FlowStats {
            generated: 500_000,
            delivered: 499_800,
            ..Default::default()
        };
        assert!((throughput(&s, 1_000_000).unwrap() - 999_600.0).abs() < 1e-6);
        let lossless = FlowStats {
            generated: 10,
            delivered: 10,
            ..Default::default()
        };
        assert_eq!(throughput(&lossless, 2_000_000), Some(2_000_000.0));
        assert_eq!(throughput(&FlowStats::default(), 1), None);
    }

    #[test]
    fn aggregation_examples() {
        let mut s = FlowStats::default();
        s.ampdu_histogram[4] = 100;
        let a = aggregation_efficiency(&s).unwrap();
        assert_eq!((a.mean_mpdus_per_ampdu, a.non_aggregated_fraction), (4.0, 0.0));
        s.ampdu_histogram = [0, 50, 0, 0, 50];
        let a = aggregation_efficiency(&s).unwrap();
        assert_eq!((a.mean_mpdus_per_ampdu, a.non_aggregated_fraction), (2.5, 0.5));
        assert!(aggregation_efficiency(&FlowStats::default()).is_none());
    }

    #[test]
    fn jain_examples() {
        assert!((jain_index(&[3.0; 9]).unwrap() - 1.0).abs() < 1e-12);
        let mut xs = [0.0; 9];
        xs[4] = 7.0;
        assert!((jain_index(&xs).unwrap() - 1.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn delay_mean() {
        let s = FlowStats {
            delay_sum_ns: 300,
            delay_count: 3,
            ..Default::default()
        };
        assert_eq!(delay_stats(&s), Some(100.0));
        assert_eq!(delay_stats(&FlowStats::default()), None);
    }

    #[test]
    fn summary_groups_by_mac_and_direction() {
        let mk = |mac: &str, seed, direction, delivered| FlowResult {
            mac: mac.into(),
            seed,
            direction,
            rate_bps: 1000,
            stats: FlowStats {
                generated: 100,
                delivered,
                ..Default::default()
            },
        };
        let rows = summarize(&[
            mk("token", 1, Direction::Upstream, 100),
            mk("token", 1, Direction::Upstream, 50),
            mk("token", 2, Direction::Upstream, 100),
            mk("token", 2, Direction::Upstream, 100),
            mk("dcf", 1, Direction::Downstream, 10),
        ]);
        assert_eq!(rows.len(), 2);
        let up = rows.iter().find(|r| r.mac == "token").unwrap();
        assert_eq!(up.flows, 4);
        assert!((up.total_throughput_bps - 1750.0).abs() < 1e-9);
        assert!((up.mean_throughput_bps - 875.0).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn jain_in_bounds(xs in proptest::collection::vec(0.0f64..1e7, 1..30)) {
            if let Some(j) = jain_index(&xs) {
                let n = xs.len() as f64;
                prop_assert!(j >= 1.0 / n - 1e-12 && j <= 1.0 + 1e-12);
            }
        }

        #[test]
        fn throughput_never_exceeds_rate(generated in 1u64..1_000_000, frac in 0.0f64..=1.0, rate in 1u64..10_000_000) {
            let s = FlowStats { generated, delivered: (generated as f64 * frac) as u64, ..Default::default() };
            prop_assert!(throughput(&s, rate).unwrap() <= rate as f64 + 1e-6);
        }
    }
}
