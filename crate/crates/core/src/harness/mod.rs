//! Closed-loop scenarios on a virtual clock.
//!
//! Each control tick the edge drains the return channel, updates the delay
//! estimate from command echoes, predicts the vehicle (and any obstacle)
//! forward, solves the NMPC problem and sends the first input down the
//! command channel. Between ticks the plant integrates on a sub-step grid,
//! splitting steps at command arrival times, publishing odometry at every
//! node and echoing every command it receives.

pub mod config;
pub mod edge;
pub mod log;
pub mod metrics;
pub mod plant;
pub mod safety;
pub mod udp;

use std::path::Path;

use thiserror::Error;

pub use config::{DelayConfig, DelaySpec, LaunchPoint, ObstacleLaunch, ScenarioConfig, ScenarioKind};
pub use log::{LogRow, PredictionRecord};
pub use metrics::{avoidance_recovery, compute_metrics, Recovery, RunMetrics};
pub use plant::ClosestApproach;
pub use safety::{safety_monitor, LinkState, SafetyConfig};

use crate::channel::{Payload, SimChannel, TimestampedMessage};
use crate::model::UavState;
use crate::nmpc::Termination;
use edge::Edge;
use plant::{interpolate, Plant};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("simulation diverged at t = {t}: {reason}")]
    SimulationDiverged { t: f64, reason: String },
    #[error("run aborted after {} ticks: {source}", partial.rows.len())]
    Aborted {
        source: Box<HarnessError>,
        partial: Box<PartialRun>,
    },
    #[error("solver: {0}")]
    Solver(String),
    #[error("channel: {0}")]
    Channel(String),
    #[error("log: {0}")]
    Log(String),
    #[error("log has no rows in the metric window")]
    EmptyLog,
    #[error("tunnel: {0}")]
    Tunnel(String),
}

/// Logs written up to the point a run was aborted.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialRun {
    pub rows: Vec<LogRow>,
    pub predictions: Vec<PredictionRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveRecord {
    pub t: f64,
    pub iterations: usize,
    pub converged: bool,
    pub termination: Termination,
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub kind: ScenarioKind,
    pub rows: Vec<LogRow>,
    pub predictions: Vec<PredictionRecord>,
    pub solves: Vec<SolveRecord>,
    /// Round trips measured from echoes: echo arrival minus command stamp.
    pub loop_delays: Vec<f64>,
    pub closest_approaches: Vec<ClosestApproach>,
    pub link_transitions: Vec<(f64, LinkState)>,
    /// `min_obstacle_distance` is the closest approach between integration
    /// nodes, not only at control ticks.
    pub metrics: RunMetrics,
}

impl RunOutput {
    /// Writes `log.csv`, `predictions.csv` and `metrics.csv`.
    pub fn write_to(&self, dir: &Path) -> Result<(), HarnessError> {
        write_logs(dir, &self.rows, &self.predictions)?;
        std::fs::write(dir.join("metrics.csv"), self.metrics.to_string()).map_err(|e| HarnessError::Log(e.to_string()))
    }
}

pub fn write_logs(dir: &Path, rows: &[LogRow], predictions: &[PredictionRecord]) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::Log(format!("{}: {e}", dir.display())))?;
    log::write_log_file(&dir.join("log.csv"), rows)?;
    log::write_predictions_file(&dir.join("predictions.csv"), predictions)
}

pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunOutput, HarnessError> {
    cfg.validate()?;
    let ts = cfg.ts();
    let (down_model, up_model) = cfg.delay.build(cfg.seed, ts)?;
    let mut down = SimChannel::new(down_model).with_blackouts(cfg.delay.blackouts.clone());
    let mut up = SimChannel::new(up_model).with_blackouts(cfg.delay.blackouts.clone());

    let mut edge = Edge::new(cfg)?;
    let start = edge.reference_position(0);
    let mut plant = Plant::new(
        UavState::hover_at(start, 0.0),
        cfg.params,
        ts,
        cfg.substeps,
        SafetyConfig {
            enabled: cfg.safety_enabled,
            timeout_s: cfg.safety_timeout_s,
        },
        cfg.launches.clone(),
    );

    let mut rows = Vec::with_capacity(cfg.ticks());
    let mut pending = Vec::with_capacity(cfg.ticks());
    let mut solves = Vec::with_capacity(cfg.ticks());
    let mut loop_delays = Vec::new();
    let mut seq = 0u64;

    let result = (|| -> Result<(), HarnessError> {
        plant.advance(0.0, &mut down, &mut up)?;
        for k in 0..cfg.ticks() {
            let t = k as f64 * ts;
            for d in up.poll(t) {
                if let Payload::CommandEcho { echo_of, .. } = d.message.payload {
                    loop_delays.push(d.delivered_at - echo_of);
                }
                edge.receive(&d.message.payload, d.message.sent_at, d.delivered_at);
            }
            let out = edge.tick(k, t)?;
            if let Some(o) = &out {
                let msg = TimestampedMessage {
                    seq,
                    sent_at: t,
                    payload: Payload::Command(o.command),
                };
                seq += 1;
                down.send(msg, t).map_err(|e| HarnessError::Channel(e.to_string()))?;
                solves.push(SolveRecord {
                    t,
                    iterations: o.iterations,
                    converged: o.converged,
                    termination: o.termination,
                    feasible: o.feasible,
                });
                pending.push((t, o.target_t, o.x0.p));
            }
            let s = *plant.state();
            let obstacle = plant.obstacle().map(|o| o.p);
            rows.push(LogRow {
                t,
                state: s,
                reference: edge.reference_position(k),
                pred: out.map(|o| o.x0.p),
                command: out.map(|o| o.command),
                tau_hat: out.map_or(0.0, |o| o.tau_hat),
                obstacle,
                obstacle_distance: obstacle.map(|p| (p - s.p).norm()),
                solver_iterations: out.map(|o| o.iterations),
                solver_converged: out.map(|o| o.converged),
            });
            plant.advance((k + 1) as f64 * ts, &mut down, &mut up)?;
        }
        Ok(())
    })();

    let predictions: Vec<PredictionRecord> = pending
        .iter()
        .filter_map(|&(t, target_t, predicted)| {
            Some(PredictionRecord {
                t,
                target_t,
                predicted,
                actual: interpolate(plant.trace(), target_t)?,
            })
        })
        .collect();

    if let Err(e) = result {
        return Err(HarnessError::Aborted {
            source: Box::new(e),
            partial: Box::new(PartialRun { rows, predictions }),
        });
    }

    let mut metrics = compute_metrics(&rows, &predictions, cfg.transient_s)?;
    metrics.min_obstacle_distance = plant.closest_approaches().iter().map(|c| c.distance).reduce(f64::min);
    Ok(RunOutput {
        kind: cfg.kind,
        rows,
        predictions,
        solves,
        loop_delays,
        closest_approaches: plant.closest_approaches().to_vec(),
        link_transitions: plant.transitions().to_vec(),
        metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short(kind: ScenarioKind, delay: DelayConfig) -> ScenarioConfig {
        ScenarioConfig {
            kind,
            duration_s: 8.0,
            delay,
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn first_rows_wait_for_an_observation() {
        let out = run_scenario(&short(ScenarioKind::Track, DelayConfig::constant(0.1))).unwrap();
        assert!(out.rows[0].pred.is_none());
        assert!(out.rows[0].command.is_none());
        assert!(out.rows.iter().skip(3).all(|r| r.command.is_some()));
    }

    #[test]
    fn constant_delay_estimate_is_exact_from_the_first_echo() {
        let out = run_scenario(&short(ScenarioKind::Track, DelayConfig::constant(0.08))).unwrap();
        for d in &out.loop_delays {
            assert!((d - 0.08).abs() < 1e-9, "{d}");
        }
        let with_tau: Vec<_> = out.rows.iter().filter(|r| r.tau_hat > 0.0).collect();
        assert!(!with_tau.is_empty());
        assert!(with_tau.iter().all(|r| (r.tau_hat - 0.08).abs() < 1e-9));
    }

    #[test]
    fn tracks_the_circle() {
        let out = run_scenario(&short(ScenarioKind::Track, DelayConfig::default())).unwrap();
        assert!(out.metrics.rms_euclidean < 0.05, "{:?}", out.metrics);
        assert!(out.solves.iter().all(|s| s.feasible));
    }

    #[test]
    fn blackout_triggers_hold_then_recovers() {
        let mut cfg = short(ScenarioKind::Track, DelayConfig::constant(0.067));
        cfg.delay.blackouts = vec![(4.0, 5.0)];
        let out = run_scenario(&cfg).unwrap();
        let states: Vec<_> = out.link_transitions.iter().map(|(_, s)| *s).collect();
        assert_eq!(states, vec![LinkState::Hold, LinkState::Normal]);
        let (t_hold, t_back) = (out.link_transitions[0].0, out.link_transitions[1].0);
        assert!(t_hold > 4.5 && t_hold < 4.6, "{t_hold}");
        assert!(t_back > 5.0 && t_back < 5.2, "{t_back}");
        let dz = out
            .rows
            .iter()
            .filter(|r| r.t >= 4.0 && r.t <= 6.0)
            .map(|r| (r.state.p.z - r.reference.z).abs())
            .fold(0.0, f64::max);
        assert!(dz <= 0.3, "{dz}");
    }
}
