use wildmac_core::config::{load_config, parse_config, ConfigError, Directions, MacKind, Rate, ScenarioConfig};
use wildmac_core::mac::FrameKind;
use wildmac_core::metrics::{aggregation_efficiency, delay_stats, throughput, FlowStats};
use wildmac_core::network::{run_scenario, RunOptions, RunOutput};
use wildmac_core::report::{sweep, FLOW_COLUMNS};
use wildmac_core::traffic::Direction;

fn scenario(rate: u64, mac: MacKind, secs: f64) -> ScenarioConfig {
    ScenarioConfig {
        rate: Rate(rate),
        mac,
        duration: secs,
        ..Default::default()
    }
}

fn merged(out: &RunOutput, dir: Direction) -> FlowStats {
    let mut m = FlowStats::default();
    for (f, s) in out.flows.iter().zip(&out.stats) {
        if f.direction != dir {
            continue;
        }
        m.generated += s.generated;
        m.delivered += s.delivered;
        m.dropped_ip += s.dropped_ip;
        m.delay_sum_ns += s.delay_sum_ns;
        m.delay_count += s.delay_count;
        for i in 0..5 {
            m.ampdu_histogram[i] += s.ampdu_histogram[i];
        }
    }
    m
}

fn scenario_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

#[test]
fn minimal_token_file_is_scenario_1() {
    let cfg = parse_config("mac = \"token\"\nrate = \"1000k\"\n").unwrap();
    assert_eq!(cfg.mac, MacKind::Token);
    assert_eq!(cfg.rate, Rate(1_000_000));
    assert_eq!((cfg.n_nodes, cfg.spacing, cfg.mcs, cfg.packet_bytes), (10, 500.0, 4, 512));
    assert_eq!(cfg.duration, 500.0);
    assert_eq!(cfg.max_distance(), 4500.0);
    assert_eq!(cfg.queues.max_ampdu, 4);
    assert_eq!(cfg.token.credits, 4);
}

#[test]
fn minimal_dcf_file_is_scenario_3() {
    let cfg = parse_config("mac = \"dcf\"\nrate = \"2000k\"\n").unwrap();
    assert_eq!(cfg.mac, MacKind::Dcf);
    assert_eq!(cfg.rate, Rate(2_000_000));
    assert_eq!(cfg.n_nodes, 10);
}

#[test]
fn config_errors_name_the_key() {
    let e = parse_config("n_nodes = 1\n").unwrap_err();
    assert!(matches!(e, ConfigError::Invalid(_)));
    assert!(e.to_string().contains("n_nodes"), "{e}");
    let e = parse_config("rate = \"1000k\"\nspaceing = 3\n").unwrap_err();
    assert!(e.to_string().contains("spaceing"), "{e}");
    assert!(parse_config("[token]\ncredits = 0\n").unwrap_err().to_string().contains("credits"));
}

#[test]
fn config_echo_round_trips() {
    let cfg = parse_config("mac = \"dcf\"\nrate = \"2M\"\nseeds = [7, 8]\n").unwrap();
    let again = parse_config(&cfg.to_toml()).unwrap();
    assert_eq!(cfg, again);
}

#[test]
fn shipped_scenarios() {
    let dir = scenario_dir();
    for (file, mac, rate) in [
        ("scenario1_token.toml", MacKind::Token, 1_000_000),
        ("scenario1_dcf.toml", MacKind::Dcf, 1_000_000),
        ("scenario3_token.toml", MacKind::Token, 2_000_000),
        ("scenario3_dcf.toml", MacKind::Dcf, 2_000_000),
    ] {
        let cfg = load_config(dir.join(file)).unwrap();
        assert_eq!((cfg.mac, cfg.rate.0, cfg.seeds.len()), (mac, rate, 30), "{file}");
    }
    for file in ["scenario2.toml", "scenario4.toml"] {
        let e = load_config(dir.join(file)).unwrap_err();
        assert!(e.to_string().contains("not supported"), "{file}: {e}");
    }
    assert!(matches!(load_config(dir.join("missing.toml")), Err(ConfigError::Io { .. })));
}

#[test]
fn zero_duration_is_empty() {
    for mac in [MacKind::Token, MacKind::Dcf] {
        let out = run_scenario(&scenario(1_000_000, mac, 0.0), 1, RunOptions::default()).unwrap();
        assert_eq!(out.events, 0);
        assert!(out.stats.iter().all(|s| *s == FlowStats::default()));
    }
}

#[test]
fn sweep_has_one_row_per_seed_and_flow() {
    let cfg = scenario(1_000_000, MacKind::Token, 0.3);
    let seeds: Vec<u64> = (1..=30).collect();
    let report = sweep(&cfg, &seeds, &[MacKind::Token], RunOptions::default()).unwrap();
    let csv = String::from_utf8(report.flows_csv().unwrap()).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], FLOW_COLUMNS.join(","));
    assert_eq!(lines.len(), 1 + 540);
    let dirs: Vec<_> = report.summary.iter().map(|r| r.direction).collect();
    assert_eq!(dirs, [Direction::Downstream, Direction::Upstream]);
    assert!(report.summary.iter().all(|r| r.flows == 270));
}

#[test]
fn sweep_order_is_stable() {
    let cfg = scenario(2_000_000, MacKind::Token, 1.0);
    let a = sweep(&cfg, &[3, 1, 2], &[MacKind::Dcf, MacKind::Token], RunOptions::default()).unwrap();
    let b = sweep(&cfg, &[3, 1, 2], &[MacKind::Dcf, MacKind::Token], RunOptions::default()).unwrap();
    assert_eq!(a.flows_csv().unwrap(), b.flows_csv().unwrap());
    assert_eq!(a.summary_csv().unwrap(), b.summary_csv().unwrap());
    let order: Vec<(MacKind, u64)> = a.outputs.iter().map(|o| (o.mac, o.seed)).collect();
    assert_eq!(
        order,
        [
            (MacKind::Dcf, 3),
            (MacKind::Dcf, 1),
            (MacKind::Dcf, 2),
            (MacKind::Token, 3),
            (MacKind::Token, 1),
            (MacKind::Token, 2)
        ]
    );
}

#[test]
fn same_seed_same_trace() {
    let cfg = scenario(1_000_000, MacKind::Dcf, 2.0);
    let opts = RunOptions {
        trace: true,
        ..Default::default()
    };
    let a = run_scenario(&cfg, 9, opts).unwrap();
    let b = run_scenario(&cfg, 9, opts).unwrap();
    assert_eq!(a.events, b.events);
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.stats, b.stats);
}

// Counting oracle over the event trace: in every complete round of nine grants,
// each station appears exactly once.
#[test]
fn each_station_once_per_round() {
    let out = run_scenario(
        &scenario(1_000_000, MacKind::Token, 10.0),
        4,
        RunOptions {
            trace: true,
            ..Default::default()
        },
    )
    .unwrap();
    let grants: Vec<u16> = out
        .trace
        .iter()
        .filter(|l| l.contains(" tx TokenGrant -> STA"))
        .map(|l| l.rsplit("STA").next().unwrap().parse().unwrap())
        .collect();
    assert!(grants.len() > 9 * 500);
    assert_eq!(grants.len(), out.token.as_ref().unwrap().grants.len());
    for round in grants.chunks_exact(9) {
        let mut seen = [false; 10];
        for &s in round {
            assert!(!seen[s as usize], "station {s} twice in one round");
            seen[s as usize] = true;
        }
    }
}

#[test]
fn token_timeouts_are_a_few_milliseconds() {
    let out = run_scenario(&scenario(1_000_000, MacKind::Token, 0.1), 1, RunOptions::default()).unwrap();
    let t = out.token.unwrap().timeouts.unwrap();
    let ms = t.recovery.as_secs_f64() * 1e3;
    assert!((1.0..10.0).contains(&ms), "recovery {ms} ms");
    assert!(t.sta_token_loss > t.recovery);
}

// Lightly loaded flows that start together still fill most aggregates: a station
// only sends what arrived before its turn, and a 1 Mbit/s flow queues several
// packets per round.
#[test]
fn light_load_still_aggregates() {
    let mut cfg = scenario(1_000_000, MacKind::Token, 20.0);
    cfg.start_window = 0.0;
    let out = run_scenario(&cfg, 2, RunOptions::default()).unwrap();
    for dir in [Direction::Downstream, Direction::Upstream] {
        let a = aggregation_efficiency(&merged(&out, dir)).unwrap();
        assert!(a.mean_mpdus_per_ampdu > 2.5 && a.non_aggregated_fraction < 0.05, "{dir:?} {a:?}");
    }
}

#[test]
fn saturated_ap_queue_overflows() {
    let out = run_scenario(&scenario(2_000_000, MacKind::Token, 10.0), 1, RunOptions::default()).unwrap();
    let down = merged(&out, Direction::Downstream);
    assert!(down.dropped_ip > down.generated / 5, "{down:?}");
}

#[test]
fn saturated_upstream_delay_order_of_magnitude() {
    // A 1000-slot queue emptied at about 1150 kbit/s holds a packet for about 3.56 s.
    let reference = 1000.0 * 4096.0 / 1.15e6;
    let out = run_scenario(&scenario(2_000_000, MacKind::Token, 30.0), 1, RunOptions::default()).unwrap();
    let d = delay_stats(&merged(&out, Direction::Upstream)).unwrap() / 1e9;
    assert!(d > reference / 10.0 && d < reference * 10.0, "delay {d} s");
}

#[test]
fn single_packet_delay_is_one_exchange() {
    // One upstream packet on an idle two-node network.
    let mut cfg = scenario(1_000_000, MacKind::Dcf, 0.006);
    cfg.n_nodes = 2;
    cfg.directions = Directions::Upstream;
    cfg.start_window = 0.0;
    cfg.radio.fading = false;
    let out = run_scenario(&cfg, 1, RunOptions::default()).unwrap();
    let s = &out.stats[0];
    assert_eq!((s.generated, s.delivered), (1, 1));
    let d_us = delay_stats(s).unwrap() / 1e3;
    // DIFS (10 + 2*11 µs), at most 15 slots of 11 µs, the frame, propagation,
    // then SIFS and the block ack back.
    let frame = 36.0 + 556.0 * 8.0 / 39.0;
    let prop = 500.0 / 299.792458;
    let back = 10.0 + 36.0 + 32.0 * 8.0 / 39.0 + prop;
    let lo = 32.0 + frame + prop;
    let hi = 32.0 + 15.0 * 11.0 + frame + prop + back + 1.0;
    assert!(d_us >= lo && d_us <= hi, "delay {d_us} µs not in [{lo}, {hi}]");
}

#[test]
fn capacity_bound_and_ampdu_limit() {
    for mac in [MacKind::Token, MacKind::Dcf] {
        let out = run_scenario(
            &scenario(2_000_000, mac, 5.0),
            3,
            RunOptions {
                frame_log: true,
                ..Default::default()
            },
        )
        .unwrap();
        let bits: f64 = out.stats.iter().map(|s| s.delivered as f64 * 512.0 * 8.0).sum();
        assert!(bits <= out.busy_time.as_secs_f64() * 39e6);
        let frames = out.frames.unwrap();
        assert!(frames.iter().filter(|f| f.kind == FrameKind::Data).all(|f| (1..=4).contains(&f.payloads.len())));
        assert!(out.max_mpdu_age.as_nanos() <= 500_000_000);
        for (f, s) in out.flows.iter().zip(&out.stats) {
            assert!(throughput(s, f.rate_bps).unwrap_or(0.0) <= f.rate_bps as f64);
            assert!(s.conserved());
        }
    }
}

#[test]
fn fading_is_shared_across_macs() {
    let opts = RunOptions {
        record_fading: true,
        ..Default::default()
    };
    let a = run_scenario(&scenario(1_000_000, MacKind::Token, 2.0), 5, opts).unwrap();
    let b = run_scenario(&scenario(1_000_000, MacKind::Dcf, 2.0), 5, opts).unwrap();
    let (fa, fb) = (a.fading.unwrap(), b.fading.unwrap());
    let shared: Vec<_> = fa.iter().filter(|(k, _)| fb.contains_key(k)).collect();
    assert!(shared.len() > 100);
    assert!(shared.iter().all(|(k, v)| fb[k].to_bits() == v.to_bits()));
}

#[test]
fn eviction_shrinks_the_round() {
    // Heavy forced loss with eviction on: stations drop out but the AP keeps cycling.
    let mut cfg = scenario(1_000_000, MacKind::Token, 5.0);
    cfg.token.forced_token_loss = 0.6;
    cfg.token.eviction_threshold = 3;
    let out = run_scenario(&cfg, 1, RunOptions::default()).unwrap();
    let log = out.token.unwrap();
    assert!(!log.evicted.is_empty());
    for r in log.recoveries.iter().filter(|r| r.evicted) {
        assert!(log.grants.iter().all(|g| g.sta != r.sta || g.at <= r.reclaimed_at));
    }
    assert!(out.stats.iter().all(|s| s.conserved()));
}
