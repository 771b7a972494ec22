//! The same loop split across two processes that talk only through the
//! UDP tunnel, in real time. The edge runs the controller as the tunnel
//! server; the onboard side runs the plant as the client and echoes every
//! command. Obstacles are simulation-only.

use std::net::SocketAddr;
use std::thread;
use std::time::{Duration, Instant};

use super::edge::Edge;
use super::log::{LogRow, PredictionRecord};
use super::plant::interpolate;
use super::safety::{safety_monitor, LinkState, SafetyConfig};
use super::{HarnessError, PartialRun, ScenarioConfig};
use crate::channel::Payload;
use crate::model::{step_uav, ControlInput, UavState, Vec3};
use crate::tunnel::{run_client, run_server, EndpointConfig, Message, Received, Role, UavOdom};

fn tunnel_err(e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Tunnel(e.to_string())
}

fn sleep_until(deadline: Instant) {
    let now = Instant::now();
    if deadline > now {
        thread::sleep(deadline - now);
    }
}

/// Converts a received datagram to the simulator's payload, with stamps in
/// seconds relative to `epoch_us`.
fn to_payload(r: &Received, epoch_us: u64) -> (Payload, f64, f64) {
    let secs = |us: u64| (us as i128 - epoch_us as i128) as f64 * 1e-6;
    let sent = secs(r.datagram.sent_at_us);
    let payload = match r.datagram.message {
        Message::ControlCommand(u) => Payload::Command(u),
        Message::UavOdometry(o) => Payload::UavOdometry(UavState {
            p: o.p,
            v: o.v,
            phi: o.phi,
            theta: o.theta,
            t: sent,
        }),
        Message::ObstacleOdometry { p, v } => Payload::ObstacleOdometry { p, v },
        Message::CommandEcho { input, echo_of_us } => Payload::CommandEcho {
            input,
            echo_of: secs(echo_of_us),
        },
        Message::Heartbeat => Payload::Heartbeat,
    };
    (payload, sent, secs(r.received_at_us))
}

/// Runs the controller for `cfg.duration_s` of wall time. Rows log the
/// latest received observation in place of the true state, and prediction
/// records are scored against later observations.
pub fn run_edge(cfg: &ScenarioConfig, bind: SocketAddr, peer: SocketAddr) -> Result<PartialRun, HarnessError> {
    cfg.validate()?;
    let endpoint = run_server(EndpointConfig {
        echo: false,
        ..EndpointConfig::new(Role::Server, bind, peer)
    })
    .map_err(tunnel_err)?;
    let mut edge = Edge::new(cfg)?;
    let ts = cfg.ts();
    let start = Instant::now();
    let epoch_us = endpoint.now_us();
    let mut rows = Vec::with_capacity(cfg.ticks());
    let mut pending = Vec::new();
    let mut observed = Vec::new();

    for k in 0..cfg.ticks() {
        sleep_until(start + Duration::from_secs_f64(k as f64 * ts));
        let t = (endpoint.now_us() - epoch_us) as f64 * 1e-6;
        while let Some(r) = endpoint.try_recv() {
            let (payload, sent, received) = to_payload(&r, epoch_us);
            if let Payload::UavOdometry(s) = payload {
                observed.push((sent, s.p));
            }
            edge.receive(&payload, sent, received);
        }
        let out = edge.tick(k, t)?;
        if let Some(o) = &out {
            endpoint.send(Message::ControlCommand(o.command)).map_err(tunnel_err)?;
            pending.push((t, o.target_t, o.x0.p));
        }
        let Some(s) = edge.latest_observation().copied() else {
            continue;
        };
        rows.push(LogRow {
            t,
            state: s,
            reference: edge.reference_position(k),
            pred: out.map(|o| o.x0.p),
            command: out.map(|o| o.command),
            tau_hat: out.map_or(0.0, |o| o.tau_hat),
            obstacle: None,
            obstacle_distance: None,
            solver_iterations: out.map(|o| o.iterations),
            solver_converged: out.map(|o| o.converged),
        });
    }
    observed.sort_by(|a: &(f64, Vec3), b| a.0.total_cmp(&b.0));
    let predictions = pending
        .into_iter()
        .filter_map(|(t, target_t, predicted)| {
            Some(PredictionRecord {
                t,
                target_t,
                predicted,
                actual: interpolate(&observed, target_t)?,
            })
        })
        .collect();
    endpoint.shutdown();
    Ok(PartialRun { rows, predictions })
}

/// Counters from an onboard run.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct OnboardSummary {
    pub commands: u64,
    pub odometry_sent: u64,
    pub hold_ticks: u64,
    pub final_state: Option<UavState>,
}

/// Runs the plant in real time for `cfg.duration_s`, publishing odometry at
/// every sub-step and holding hover when commands stop arriving.
pub fn run_onboard(cfg: &ScenarioConfig, bind: SocketAddr, peer: SocketAddr) -> Result<OnboardSummary, HarnessError> {
    cfg.validate()?;
    let endpoint = run_client(EndpointConfig {
        echo: true,
        ..EndpointConfig::new(Role::Client, bind, peer)
    })
    .map_err(tunnel_err)?;
    let h = cfg.ts() / cfg.substeps as f64;
    let nodes = cfg.ticks() * cfg.substeps;
    let safety = SafetyConfig {
        enabled: cfg.safety_enabled,
        timeout_s: cfg.safety_timeout_s,
    };
    let edge = Edge::new(cfg)?;
    let mut state = UavState::hover_at(edge.reference_position(0), 0.0);
    let mut applied = ControlInput::hover();
    let mut summary = OnboardSummary::default();
    let start = Instant::now();
    let mut last_command = Instant::now();

    for j in 0..=nodes {
        sleep_until(start + Duration::from_secs_f64(j as f64 * h));
        while let Some(r) = endpoint.try_recv() {
            if let Message::ControlCommand(u) = r.datagram.message {
                applied = u;
                last_command = Instant::now();
                summary.commands += 1;
            }
        }
        let link = safety_monitor(endpoint.link_up(), last_command.elapsed().as_secs_f64(), &safety);
        let u = match link {
            LinkState::Normal => applied,
            LinkState::Hold => {
                summary.hold_ticks += 1;
                ControlInput::hover()
            }
        };
        let odom = UavOdom {
            p: state.p,
            v: state.v,
            phi: state.phi,
            theta: state.theta,
        };
        endpoint.send(Message::UavOdometry(odom)).map_err(tunnel_err)?;
        summary.odometry_sent += 1;
        state = step_uav(&state, &u, &cfg.params, h).map_err(|e| HarnessError::SimulationDiverged {
            t: j as f64 * h,
            reason: e.to_string(),
        })?;
    }
    summary.final_state = Some(state);
    endpoint.shutdown();
    Ok(summary)
}
