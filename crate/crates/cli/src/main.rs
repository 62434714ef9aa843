use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use wildmac_core::config::{load_config, MacKind, ScenarioConfig};
use wildmac_core::network::{run_scenario, RunOptions};
use wildmac_core::report::{sweep, RunReport};

#[derive(Parser)]
#[command(name = "wildmac", version, about = "Token-passing vs. DCF MAC simulator for long-distance Wi-Fi")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario with one seed.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run every seed in the config; both MACs unless --mac is given.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated seeds, overriding the config list.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Parse and check a config without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    mac: Option<MacKind>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Write the per-run event trace.
    #[arg(long)]
    trace: bool,
    /// Simulated seconds, overriding the config.
    #[arg(long)]
    duration: Option<f64>,
}

impl Common {
    fn load(&self) -> Result<ScenarioConfig> {
        let mut cfg = load_config(&self.config)?;
        if let Some(m) = self.mac {
            cfg.mac = m;
        }
        if let Some(d) = self.duration {
            cfg.duration = d;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn write_outputs(dir: &Path, report: &RunReport, trace: bool) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(dir.join("flows.csv"), report.flows_csv()?)?;
    fs::write(dir.join("summary.csv"), report.summary_csv()?)?;
    fs::write(dir.join("config.toml"), report.config.to_toml())?;
    if trace {
        let single = report.outputs.len() == 1;
        for o in &report.outputs {
            let name = if single {
                "trace.txt".to_string()
            } else {
                format!("trace_{}_{}.txt", o.mac, o.seed)
            };
            let mut text = o.trace.join("\n");
            text.push('\n');
            fs::write(dir.join(name), text)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match real_main() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn real_main() -> Result<()> {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Validate { config } => {
            let cfg = load_config(&config)?;
            println!("{}: ok ({} nodes, mac {}, {} s)", cfg.name, cfg.n_nodes, cfg.mac, cfg.duration);
        }
        Cmd::Run { common, seed } => {
            let cfg = common.load()?;
            let seed = seed.unwrap_or(cfg.seeds[0]);
            let opts = RunOptions {
                trace: common.trace,
                ..Default::default()
            };
            let t0 = Instant::now();
            let out = run_scenario(&cfg, seed, opts)?;
            let report = RunReport::from_outputs(&cfg, vec![out], t0.elapsed());
            write_outputs(&common.out, &report, common.trace)?;
            print!("{}", report.table());
            eprintln!("{} run(s) in {:.1} s", report.outputs.len(), report.elapsed.as_secs_f64());
        }
        Cmd::Sweep { common, seeds } => {
            let cfg = common.load()?;
            let seeds = seeds.unwrap_or_else(|| cfg.seeds.clone());
            let macs = match common.mac {
                Some(m) => vec![m],
                None => vec![MacKind::Token, MacKind::Dcf],
            };
            let opts = RunOptions {
                trace: common.trace,
                ..Default::default()
            };
            let report = sweep(&cfg, &seeds, &macs, opts)?;
            write_outputs(&common.out, &report, common.trace)?;
            print!("{}", report.table());
            eprintln!("{} run(s) in {:.1} s", report.outputs.len(), report.elapsed.as_secs_f64());
        }
    }
    Ok(())
}
