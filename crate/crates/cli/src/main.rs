use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use paced_core::harness::log::{read_log_file, read_predictions_file, write_plotdata};
use paced_core::harness::udp::{run_edge, run_onboard};
use paced_core::harness::{compute_metrics, run_scenario, write_logs, ObstacleLaunch, ScenarioConfig, ScenarioKind};

/// Delay-compensated NMPC flight loop: scenario runs and log analysis.
#[derive(Debug, Parser)]
#[command(name = "paced", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a closed-loop scenario and write log.csv, predictions.csv and metrics.csv.
    Run(RunArgs),
    /// Print metrics for a log; reads predictions.csv next to it when present.
    Metrics {
        #[arg(long)]
        log: PathBuf,
        /// Seconds excluded from the start of the log.
        #[arg(long, default_value_t = 3.0)]
        transient: f64,
    },
    /// Print a log as long-format `t,series,value` CSV for plotting.
    Plotdata {
        #[arg(long)]
        log: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Scenario {
    Track,
    TrackNoEstimator,
    Obstacle,
}

impl From<Scenario> for ScenarioKind {
    fn from(s: Scenario) -> Self {
        match s {
            Scenario::Track => ScenarioKind::Track,
            Scenario::TrackNoEstimator => ScenarioKind::TrackNoEstimator,
            Scenario::Obstacle => ScenarioKind::Obstacle,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum UdpSide {
    Edge,
    Onboard,
}

#[derive(Debug, clap::Args)]
struct RunArgs {
    /// Overrides the kind set in the config file.
    #[arg(long, value_enum)]
    scenario: Option<Scenario>,
    /// INI scenario file; built-in defaults otherwise.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; falls back to `output_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run one half of the loop over UDP in real time instead of simulating.
    #[arg(long, value_enum, requires_all = ["bind", "peer"])]
    udp: Option<UdpSide>,
    #[arg(long)]
    bind: Option<SocketAddr>,
    #[arg(long)]
    peer: Option<SocketAddr>,
}

fn load_config(args: &RunArgs) -> Result<ScenarioConfig> {
    let mut cfg = match &args.config {
        Some(path) => ScenarioConfig::from_ini_file(path)?,
        None => ScenarioConfig::default(),
    };
    if let Some(s) = args.scenario {
        cfg.kind = s.into();
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if cfg.kind == ScenarioKind::Obstacle && cfg.launches.is_empty() {
        cfg.launches = ObstacleLaunch::default_pair();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(args: RunArgs) -> Result<()> {
    let cfg = load_config(&args)?;
    let out = args.out.clone().or_else(|| cfg.output_dir.clone());

    if args.udp == Some(UdpSide::Onboard) {
        let (bind, peer) = (args.bind.unwrap(), args.peer.unwrap());
        let s = run_onboard(&cfg, bind, peer)?;
        println!("commands,{}", s.commands);
        println!("odometry_sent,{}", s.odometry_sent);
        println!("hold_ticks,{}", s.hold_ticks);
        return Ok(());
    }

    let Some(out) = out else {
        bail!("no output directory: pass --out or set output_dir in the config");
    };
    if args.udp == Some(UdpSide::Edge) {
        let run = run_edge(&cfg, args.bind.unwrap(), args.peer.unwrap())?;
        write_logs(&out, &run.rows, &run.predictions)?;
        let metrics = compute_metrics(&run.rows, &run.predictions, cfg.transient_s)?;
        std::fs::write(out.join("metrics.csv"), metrics.to_string())?;
        print!("{metrics}");
        return Ok(());
    }

    let output = match run_scenario(&cfg) {
        Ok(o) => o,
        Err(paced_core::harness::HarnessError::Aborted { source, partial }) => {
            write_logs(&out, &partial.rows, &partial.predictions)?;
            bail!("{source}; partial logs written to {}", out.display());
        }
        Err(e) => return Err(e.into()),
    };
    output.write_to(&out)?;
    print!("{}", output.metrics);
    Ok(())
}

fn metrics(log: &Path, transient: f64) -> Result<()> {
    let rows = read_log_file(log)?;
    let preds_path = log.with_file_name("predictions.csv");
    let preds = if preds_path.exists() {
        read_predictions_file(&preds_path)?
    } else {
        Vec::new()
    };
    let m = compute_metrics(&rows, &preds, transient).with_context(|| format!("metrics for {}", log.display()))?;
    print!("{m}");
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run(args) => run(args),
        Command::Metrics { log, transient } => metrics(&log, transient),
        Command::Plotdata { log } => {
            let rows = read_log_file(&log)?;
            let mut buf = Vec::new();
            write_plotdata(&mut buf, &rows)?;
            match std::io::stdout().lock().write_all(&buf) {
                Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
                r => Ok(r?),
            }
        }
    }
}
