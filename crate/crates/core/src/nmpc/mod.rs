//! Receding-horizon optimal control for the delayed quadrotor.
//!
//! The problem minimizes a quadratic tracking cost over a forward-Euler
//! rollout of the vehicle model, subject to input boxes, per-step bounds on
//! the change of the attitude commands, and spherical keep-out zones around
//! predicted obstacle positions. See [`solver::Solver`] for how each
//! constraint class is enforced.

mod cost;
mod solver;

pub use cost::{evaluate_cost, objective, obstacle_violation, rollout};
pub use solver::{shift_warm_start, Solver, SolverSettings, Termination};

use thiserror::Error;

use crate::model::{step_obstacle, ControlInput, InputVector, ObstacleState, StateVector, UavParams, Vec3};
use crate::predictor::PredictedObstacle;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NmpcError {
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("rollout or cost became non-finite")]
    NonFinite,
}

/// Diagonal cost weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McpWeights {
    /// `[px, py, pz, vx, vy, vz, phi, theta]`
    pub state: StateVector,
    /// `[thrust, phi_d, theta_d]`, penalizes distance from the hover input.
    pub input: InputVector,
    /// `[thrust, phi_d, theta_d]`, penalizes change between consecutive inputs.
    pub input_rate: InputVector,
}

impl Default for McpWeights {
    fn default() -> Self {
        Self {
            state: StateVector::from_column_slice(&[8.0, 8.0, 20.0, 1.0, 1.0, 1.0, 2.0, 2.0]),
            input: InputVector::new(2.0, 4.0, 4.0),
            input_rate: InputVector::new(4.0, 8.0, 8.0),
        }
    }
}

impl McpWeights {
    pub fn validate(&self) -> Result<(), NmpcError> {
        let all = self.state.iter().chain(self.input.iter()).chain(self.input_rate.iter());
        if all.clone().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(NmpcError::InvalidProblem(
                "weights must be finite and non-negative".into(),
            ));
        }
        if self.state.fixed_rows::<3>(0).iter().all(|w| *w == 0.0) {
            return Err(NmpcError::InvalidProblem(
                "at least one position weight must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McpBounds {
    pub u_min: ControlInput,
    pub u_max: ControlInput,
    /// Largest change of `phi_d` between consecutive steps, rad.
    pub d_phi_max: f64,
    pub d_theta_max: f64,
}

impl Default for McpBounds {
    fn default() -> Self {
        Self {
            u_min: ControlInput::new(2.0, -0.35, -0.35),
            u_max: ControlInput::new(18.0, 0.35, 0.35),
            d_phi_max: 0.1,
            d_theta_max: 0.1,
        }
    }
}

impl McpBounds {
    pub fn validate(&self) -> Result<(), NmpcError> {
        let lo = self.u_min.to_vector();
        let hi = self.u_max.to_vector();
        if lo.iter().zip(hi.iter()).any(|(a, b)| !(a <= b)) {
            return Err(NmpcError::InvalidProblem("u_min must not exceed u_max".into()));
        }
        if !(self.d_phi_max > 0.0 && self.d_theta_max > 0.0) {
            return Err(NmpcError::InvalidProblem("rate bounds must be positive".into()));
        }
        Ok(())
    }

    /// True if `u_seq` satisfies the input boxes and the rate bounds,
    /// the first step measured against `u_prev`.
    pub fn admits(&self, u_prev: &ControlInput, u_seq: &[ControlInput]) -> bool {
        let mut prev = *u_prev;
        u_seq.iter().all(|u| {
            let in_box = (self.u_min.thrust..=self.u_max.thrust).contains(&u.thrust)
                && (self.u_min.phi_d..=self.u_max.phi_d).contains(&u.phi_d)
                && (self.u_min.theta_d..=self.u_max.theta_d).contains(&u.theta_d);
            let rate_ok =
                (u.phi_d - prev.phi_d).abs() <= self.d_phi_max && (u.theta_d - prev.theta_d).abs() <= self.d_theta_max;
            prev = *u;
            in_box && rate_ok
        })
    }
}

/// Predicted positions of one obstacle over the horizon with its keep-out radii.
#[derive(Debug, Clone, PartialEq)]
pub struct ObstacleTrack {
    /// One position per horizon stage, `N + 1` entries.
    pub positions: Vec<Vec3>,
    /// Collision-sphere radius of the obstacle.
    pub radius: f64,
    /// Clearance added around the collision sphere.
    pub safety_radius: f64,
}

impl ObstacleTrack {
    /// Euler rollout of a predicted obstacle over `horizon` steps of `ts`.
    pub fn from_prediction(
        start: &PredictedObstacle,
        radius: f64,
        safety_radius: f64,
        horizon: usize,
        ts: f64,
    ) -> Self {
        let mut o = ObstacleState {
            p: start.p,
            v: start.v,
            radius,
            t: start.t,
        };
        let mut positions = Vec::with_capacity(horizon + 1);
        positions.push(o.p);
        for _ in 0..horizon {
            o = step_obstacle(&o, ts);
            positions.push(o.p);
        }
        Self {
            positions,
            radius,
            safety_radius,
        }
    }

    pub fn static_at(p: Vec3, radius: f64, safety_radius: f64, horizon: usize) -> Self {
        Self {
            positions: vec![p; horizon + 1],
            radius,
            safety_radius,
        }
    }

    pub fn keep_out(&self) -> f64 {
        self.radius + self.safety_radius
    }
}

/// One receding-horizon problem.
#[derive(Debug, Clone, PartialEq)]
pub struct OcpProblem {
    /// Initial (predicted) state, `[p; v; phi; theta]`.
    pub x0: StateVector,
    /// `N + 1` reference states.
    pub reference: Vec<StateVector>,
    pub obstacles: Vec<ObstacleTrack>,
    /// Input applied in the previous control period.
    pub u_prev: ControlInput,
    /// Input the magnitude penalty pulls towards; hover by default.
    pub u_ref: ControlInput,
    pub weights: McpWeights,
    pub bounds: McpBounds,
    pub params: UavParams,
    pub horizon: usize,
    pub ts: f64,
}

impl OcpProblem {
    /// Problem with default weights and bounds, hover as the input reference
    /// and no obstacles.
    pub fn new(x0: StateVector, reference: Vec<StateVector>, u_prev: ControlInput, ts: f64) -> Self {
        let horizon = reference.len().saturating_sub(1);
        Self {
            x0,
            reference,
            obstacles: Vec::new(),
            u_prev,
            u_ref: ControlInput::hover(),
            weights: McpWeights::default(),
            bounds: McpBounds::default(),
            params: UavParams::default(),
            horizon,
            ts,
        }
    }

    pub fn validate(&self) -> Result<(), NmpcError> {
        if self.horizon < 1 {
            return Err(NmpcError::InvalidProblem("horizon must be at least one step".into()));
        }
        if !(self.ts > 0.0) {
            return Err(NmpcError::InvalidProblem("sampling period must be positive".into()));
        }
        if self.reference.len() != self.horizon + 1 {
            return Err(NmpcError::InvalidProblem(format!(
                "reference has {} states, expected {}",
                self.reference.len(),
                self.horizon + 1
            )));
        }
        if let Some(o) = self.obstacles.iter().find(|o| o.positions.len() != self.horizon + 1) {
            return Err(NmpcError::InvalidProblem(format!(
                "obstacle track has {} positions, expected {}",
                o.positions.len(),
                self.horizon + 1
            )));
        }
        if self
            .obstacles
            .iter()
            .any(|o| !(o.radius > 0.0 && o.safety_radius > 0.0))
        {
            return Err(NmpcError::InvalidProblem("obstacle radii must be positive".into()));
        }
        if !self.x0.iter().all(|x| x.is_finite()) || !self.u_prev.is_finite() {
            return Err(NmpcError::InvalidProblem(
                "initial state and previous input must be finite".into(),
            ));
        }
        self.weights.validate()?;
        self.bounds.validate()?;
        self.params
            .validate()
            .map_err(|e| NmpcError::InvalidProblem(e.to_string()))
    }

    pub fn hover_sequence(&self) -> Vec<ControlInput> {
        vec![ControlInput::hover(); self.horizon]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McpSolution {
    pub u_seq: Vec<ControlInput>,
    /// Input to apply now, `u_seq[0]`.
    pub first: ControlInput,
    /// Tracking cost without the obstacle penalty.
    pub cost: f64,
    /// Inner iterations summed over all penalty rounds.
    pub iterations: usize,
    /// Largest positive obstacle constraint value over stages `1..=N`, m²;
    /// zero when every stage is clear.
    pub max_constraint_violation: f64,
    pub converged: bool,
    pub termination: Termination,
    pub penalty_rounds: usize,
}
