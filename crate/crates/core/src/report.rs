//! CSV reports and seed sweeps.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::Serialize;

use crate::config::{MacKind, ScenarioConfig};
use crate::error::SimError;
use crate::metrics::{aggregation_efficiency, delay_stats, summarize, throughput, FlowResult, SummaryRow};
use crate::network::{run_scenario, RunOptions, RunOutput};

pub const FLOW_COLUMNS: [&str; 16] = [
    "scenario",
    "mac",
    "seed",
    "flow_id",
    "direction",
    "distance_m",
    "generated",
    "delivered",
    "dropped_ip",
    "dropped_ttl",
    "dropped_retry",
    "retx",
    "mean_ampdu",
    "non_agg_frac",
    "throughput_bps",
    "mean_delay_ns",
];

pub const SUMMARY_COLUMNS: [&str; 12] = [
    "scenario",
    "mac",
    "direction",
    "flows",
    "mean_throughput_bps",
    "total_throughput_bps",
    "loss_ratio",
    "mean_delay_ns",
    "mean_ampdu",
    "non_agg_frac",
    "retx_frac",
    "jain",
];

/// One CSV row: one flow within one run. Floats are kept as pre-formatted strings so
/// the output is byte-stable.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowRow {
    pub scenario: String,
    pub mac: String,
    pub seed: u64,
    pub flow_id: u32,
    pub direction: String,
    pub distance_m: String,
    pub generated: u64,
    pub delivered: u64,
    pub dropped_ip: u64,
    pub dropped_ttl: u64,
    pub dropped_retry: u64,
    /// Retransmitted MPDUs (count).
    pub retx: u64,
    pub mean_ampdu: String,
    pub non_agg_frac: String,
    pub throughput_bps: String,
    pub mean_delay_ns: String,
}

/// Six decimals; empty for a missing value.
pub fn fmt_f64(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x:.6}"),
        _ => String::new(),
    }
}

pub fn flow_rows(cfg: &ScenarioConfig, out: &RunOutput) -> Vec<FlowRow> {
    out.flows
        .iter()
        .zip(&out.stats)
        .map(|(f, s)| {
            let agg = aggregation_efficiency(s);
            FlowRow {
                scenario: cfg.name.clone(),
                mac: out.mac.as_str().to_string(),
                seed: out.seed,
                flow_id: f.id.0,
                direction: f.direction.as_str().to_string(),
                distance_m: fmt_f64(Some(f.station.0 as f64 * cfg.spacing)),
                generated: s.generated,
                delivered: s.delivered,
                dropped_ip: s.dropped_ip,
                dropped_ttl: s.dropped_ttl,
                dropped_retry: s.dropped_retry,
                retx: s.retransmissions,
                mean_ampdu: fmt_f64(agg.map(|a| a.mean_mpdus_per_ampdu)),
                non_agg_frac: fmt_f64(agg.map(|a| a.non_aggregated_fraction)),
                throughput_bps: fmt_f64(throughput(s, f.rate_bps)),
                mean_delay_ns: fmt_f64(delay_stats(s)),
            }
        })
        .collect()
}

pub fn flow_results(out: &RunOutput) -> Vec<FlowResult> {
    out.flows
        .iter()
        .zip(&out.stats)
        .map(|(f, s)| FlowResult {
            mac: out.mac.as_str().to_string(),
            seed: out.seed,
            direction: f.direction,
            rate_bps: f.rate_bps,
            stats: s.clone(),
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub scenario: String,
    /// The fully resolved configuration the runs used.
    pub config: ScenarioConfig,
    /// Wall-clock time spent simulating; not part of any CSV.
    pub elapsed: Duration,
    pub rows: Vec<FlowRow>,
    pub summary: Vec<SummaryRow>,
    pub outputs: Vec<RunOutput>,
}

impl RunReport {
    pub fn from_outputs(cfg: &ScenarioConfig, outputs: Vec<RunOutput>, elapsed: Duration) -> Self {
        let rows = outputs.iter().flat_map(|o| flow_rows(cfg, o)).collect();
        let results: Vec<FlowResult> = outputs.iter().flat_map(flow_results).collect();
        RunReport {
            scenario: cfg.name.clone(),
            config: cfg.clone(),
            elapsed,
            rows,
            summary: summarize(&results),
            outputs,
        }
    }

    pub fn flows_csv(&self) -> Result<Vec<u8>, SimError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        if self.rows.is_empty() {
            w.write_record(FLOW_COLUMNS).map_err(csv_err)?;
        }
        for r in &self.rows {
            w.serialize(r).map_err(csv_err)?;
        }
        w.into_inner().map_err(|e| SimError::Io(e.to_string()))
    }

    pub fn summary_csv(&self) -> Result<Vec<u8>, SimError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(SUMMARY_COLUMNS).map_err(csv_err)?;
        for s in &self.summary {
            w.write_record([
                self.scenario.clone(),
                s.mac.clone(),
                s.direction.as_str().to_string(),
                s.flows.to_string(),
                fmt_f64(Some(s.mean_throughput_bps)),
                fmt_f64(Some(s.total_throughput_bps)),
                fmt_f64(Some(s.loss_ratio)),
                fmt_f64(s.mean_delay_ns),
                fmt_f64(s.mean_ampdu),
                fmt_f64(s.non_agg_frac),
                fmt_f64(s.retx_frac),
                fmt_f64(s.jain),
            ])
            .map_err(csv_err)?;
        }
        w.into_inner().map_err(|e| SimError::Io(e.to_string()))
    }

    /// Fixed-width table for terminals.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<6} {:<10} {:>5} {:>14} {:>14} {:>8} {:>8} {:>7}",
            "mac", "direction", "flows", "mean kbit/s", "total kbit/s", "loss %", "A-MPDU", "jain"
        );
        for r in &self.summary {
            let _ = writeln!(
                s,
                "{:<6} {:<10} {:>5} {:>14.1} {:>14.1} {:>8.3} {:>8} {:>7}",
                r.mac,
                r.direction.as_str(),
                r.flows,
                r.mean_throughput_bps / 1e3,
                r.total_throughput_bps / 1e3,
                r.loss_ratio * 100.0,
                r.mean_ampdu.map_or("-".into(), |v| format!("{v:.2}")),
                r.jain.map_or("-".into(), |v| format!("{v:.4}")),
            );
        }
        s
    }
}

fn csv_err(e: csv::Error) -> SimError {
    SimError::Io(e.to_string())
}

/// Runs every (mac, seed) pair. Runs execute in parallel but the result order is
/// `macs` major, `seeds` minor.
pub fn sweep(cfg: &ScenarioConfig, seeds: &[u64], macs: &[MacKind], opts: RunOptions) -> Result<RunReport, SimError> {
    let t0 = Instant::now();
    let jobs: Vec<(MacKind, u64)> = macs.iter().flat_map(|&m| seeds.iter().map(move |&s| (m, s))).collect();
    let outputs = jobs
        .par_iter()
        .map(|&(mac, seed)| {
            let mut c = cfg.clone();
            c.mac = mac;
            run_scenario(&c, seed, opts)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RunReport::from_outputs(cfg, outputs, t0.elapsed()))
}
