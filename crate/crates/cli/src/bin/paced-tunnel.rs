//! Standalone UDP tunnel endpoint. The server sends hover commands at a
//! fixed rate as link probes; the client receives them and, with echo on,
//! returns each one stamped as sent. Stats go to stdout as CSV.

use std::net::SocketAddr;
use std::thread;
use std::time::{Duration, Instant};

use anyhow::Result;
use clap::{Parser, ValueEnum};

use paced_core::model::ControlInput;
use paced_core::tunnel::{run_client, run_server, Endpoint, EndpointConfig, Message, Role};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RoleArg {
    Server,
    Client,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Debug, Parser)]
#[command(
    name = "paced-tunnel",
    version,
    about = "UDP tunnel endpoint with echo-based RTT stats"
)]
struct Args {
    #[arg(long, value_enum)]
    role: RoleArg,
    #[arg(long)]
    bind: SocketAddr,
    #[arg(long)]
    peer: SocketAddr,
    /// Echo received commands; defaults to on for the client, off for the server.
    #[arg(long, value_enum)]
    echo: Option<Switch>,
    #[arg(long, default_value_t = 1.0)]
    stats_interval: f64,
    /// Probe command rate of the server, Hz.
    #[arg(long, default_value_t = 30.0)]
    rate: f64,
    /// Stop after this many seconds; runs until killed otherwise.
    #[arg(long)]
    duration: Option<f64>,
}

fn print_stats(ep: &Endpoint, elapsed: f64) {
    let s = ep.stats();
    println!(
        "{elapsed:.3},{},{},{},{},{}",
        ep.rtt_estimate(),
        s.sent,
        s.received,
        s.dropped_stale,
        s.decode_errors
    );
}

fn main() -> Result<()> {
    let args = Args::parse();
    anyhow::ensure!(args.stats_interval > 0.0, "--stats-interval must be positive");
    anyhow::ensure!(args.rate > 0.0, "--rate must be positive");
    let role = match args.role {
        RoleArg::Server => Role::Server,
        RoleArg::Client => Role::Client,
    };
    let mut cfg = EndpointConfig::new(role, args.bind, args.peer);
    if let Some(e) = args.echo {
        cfg.echo = e == Switch::On;
    }
    let ep = match role {
        Role::Server => run_server(cfg)?,
        Role::Client => run_client(cfg)?,
    };

    println!("time_s,rtt_est_s,sent,received,dropped_stale,decode_errors");
    let start = Instant::now();
    let probe = Duration::from_secs_f64(1.0 / args.rate);
    let stats_every = Duration::from_secs_f64(args.stats_interval);
    let mut next_probe = start;
    let mut next_stats = start + stats_every;
    let end = args.duration.map(|d| start + Duration::from_secs_f64(d));

    loop {
        let now = Instant::now();
        if end.is_some_and(|e| now >= e) {
            break;
        }
        if role == Role::Server && now >= next_probe {
            ep.send(Message::ControlCommand(ControlInput::hover()))?;
            next_probe += probe;
        }
        if now >= next_stats {
            print_stats(&ep, start.elapsed().as_secs_f64());
            next_stats += stats_every;
        }
        while ep.try_recv().is_some() {}
        let mut wake = next_stats.min(if role == Role::Server { next_probe } else { next_stats });
        if let Some(e) = end {
            wake = wake.min(e);
        }
        if let Some(d) = wake.checked_duration_since(Instant::now()) {
            thread::sleep(d.min(Duration::from_millis(5)));
        }
    }
    print_stats(&ep, start.elapsed().as_secs_f64());
    ep.shutdown();
    Ok(())
}
