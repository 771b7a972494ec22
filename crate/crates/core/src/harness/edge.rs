//! Edge side of the loop: delay estimation, prediction and the NMPC solve.
//! Shared by the simulated and the UDP runs.

use super::config::{ObstacleLaunch, ScenarioConfig};
use super::HarnessError;
use crate::channel::{Payload, StalenessFilter};
use crate::delay::DelayEstimator;
use crate::model::{ControlInput, ObstacleState, UavState, Vec3};
use crate::nmpc::{shift_warm_start, ObstacleTrack, OcpProblem, Solver, Termination};
use crate::predictor::{predict_obstacle, predict_uav, PredictedState, PredictorOptions};
use crate::trajectory::Trajectory;

/// Result of one control tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TickOutput {
    pub command: ControlInput,
    /// Initial state handed to the solver.
    pub x0: PredictedState,
    /// Time the controller assumes `x0` describes.
    pub target_t: f64,
    pub tau_hat: f64,
    pub iterations: usize,
    pub converged: bool,
    pub termination: Termination,
    /// The returned sequence satisfies the input boxes and rate bounds.
    pub feasible: bool,
    pub obstacle_tracked: bool,
}

pub struct Edge {
    estimator_on: bool,
    ts: f64,
    horizon: usize,
    predictor: PredictorOptions,
    template: OcpProblem,
    trajectory: Trajectory,
    launches: Vec<ObstacleLaunch>,
    /// Obstacle odometry older than this is ignored.
    obstacle_max_age: f64,
    estimator: DelayEstimator,
    odometry: StalenessFilter,
    obstacles: StalenessFilter,
    echoes: StalenessFilter,
    latest: Option<UavState>,
    latest_obstacle: Option<ObstacleState>,
    echoed_input: Option<ControlInput>,
    last_sent: ControlInput,
    warm: Option<Vec<ControlInput>>,
    solver: Solver,
}

impl Edge {
    pub fn new(cfg: &ScenarioConfig) -> Result<Self, HarnessError> {
        let ts = cfg.ts();
        let mut trajectory =
            Trajectory::new(cfg.reference.clone(), ts).map_err(|e| HarnessError::Config(e.to_string()))?;
        trajectory.zero_velocity = cfg.zero_velocity_reference;
        let mut template = OcpProblem::new(
            trajectory.reference_at(0),
            trajectory.reference_window(0, cfg.horizon),
            ControlInput::hover(),
            ts,
        );
        template.weights = cfg.weights;
        template.bounds = cfg.bounds;
        template.params = cfg.params;
        Ok(Self {
            estimator_on: cfg.kind.uses_estimator(),
            ts,
            horizon: cfg.horizon,
            predictor: cfg.predictor,
            template,
            trajectory,
            launches: cfg.launches.clone(),
            obstacle_max_age: cfg.safety_timeout_s,
            estimator: DelayEstimator::new(cfg.estimator_window).map_err(|e| HarnessError::Config(e.to_string()))?,
            odometry: StalenessFilter::new(),
            obstacles: StalenessFilter::new(),
            echoes: StalenessFilter::new(),
            latest: None,
            latest_obstacle: None,
            echoed_input: None,
            last_sent: ControlInput::hover(),
            warm: None,
            solver: Solver::new(cfg.solver),
        })
    }

    pub fn trajectory(&self) -> &Trajectory {
        &self.trajectory
    }

    pub fn estimator(&self) -> &DelayEstimator {
        &self.estimator
    }

    pub fn latest_observation(&self) -> Option<&UavState> {
        self.latest.as_ref()
    }

    /// Handles one delivered message stamped `sent_at` that arrived at
    /// `received_at`.
    pub fn receive(&mut self, payload: &Payload, sent_at: f64, received_at: f64) {
        match *payload {
            Payload::UavOdometry(s) => {
                if self.odometry.admit(sent_at) {
                    self.latest = Some(UavState { t: sent_at, ..s });
                }
            }
            Payload::ObstacleOdometry { p, v } => {
                if self.obstacles.admit(sent_at) {
                    self.latest_obstacle = Some(ObstacleState {
                        p,
                        v,
                        radius: 0.0,
                        t: sent_at,
                    });
                }
            }
            Payload::CommandEcho { input, echo_of } => {
                if self.estimator_on {
                    // A negative sample means clocks disagree; the estimator
                    // counts and skips it.
                    let _ = self.estimator.record_sample(echo_of, received_at);
                }
                if self.echoes.admit(echo_of) {
                    self.echoed_input = Some(input);
                }
            }
            Payload::Command(_) | Payload::Heartbeat => {}
        }
    }

    fn launch_at(&self, t: f64) -> Option<&ObstacleLaunch> {
        self.launches.iter().rev().find(|l| l.time <= t)
    }

    /// Solves for the command to send at tick `k` (time `t`). `None` until
    /// the first observation has arrived.
    pub fn tick(&mut self, k: usize, t: f64) -> Result<Option<TickOutput>, HarnessError> {
        let Some(obs) = self.latest else { return Ok(None) };
        let (x0, tau_hat, target_t, start) = if self.estimator_on {
            let tau = self.estimator.current_estimate();
            let input = self.echoed_input.unwrap_or(self.last_sent);
            let x0 = predict_uav(&obs, &input, tau, &self.template.params, self.predictor).map_err(|e| {
                HarnessError::SimulationDiverged {
                    t,
                    reason: format!("prediction: {e}"),
                }
            })?;
            let target = obs.t + tau;
            // Horizon starts where the prediction lands, between ticks.
            (x0, tau, target, k as f64 + (target - t) / self.ts)
        } else {
            (PredictedState::identity(&obs), 0.0, t, k as f64)
        };

        let mut prob = self.template.clone();
        prob.x0 = x0.as_state().to_vector();
        prob.reference = self.trajectory.reference_window_from(start, self.horizon);
        prob.u_prev = self.last_sent;
        prob.obstacles.clear();
        let mut obstacle_tracked = false;
        if let Some(o) = self.latest_obstacle.filter(|o| t - o.t <= self.obstacle_max_age) {
            if let Some(l) = self.launch_at(o.t) {
                let tau_o = if self.estimator_on {
                    (target_t - o.t).max(0.0)
                } else {
                    0.0
                };
                let po = predict_obstacle(&o, tau_o).map_err(|e| HarnessError::SimulationDiverged {
                    t,
                    reason: format!("obstacle prediction: {e}"),
                })?;
                prob.obstacles.push(ObstacleTrack::from_prediction(
                    &po,
                    l.radius,
                    l.safety_radius,
                    self.horizon,
                    self.ts,
                ));
                obstacle_tracked = true;
            }
        }

        let sol = self
            .solver
            .solve(&prob, self.warm.as_deref())
            .map_err(|e| HarnessError::Solver(e.to_string()))?;
        let feasible = prob.bounds.admits(&prob.u_prev, &sol.u_seq);
        self.warm = Some(shift_warm_start(&sol));
        self.last_sent = sol.first;
        Ok(Some(TickOutput {
            command: sol.first,
            x0,
            target_t,
            tau_hat,
            iterations: sol.iterations,
            converged: sol.converged,
            termination: sol.termination,
            feasible,
            obstacle_tracked,
        }))
    }

    /// Reference position at tick `k`.
    pub fn reference_position(&self, k: usize) -> Vec3 {
        self.trajectory.reference_at(k).fixed_rows::<3>(0).into()
    }
}
