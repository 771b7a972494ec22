//! Delay-compensated nonlinear MPC for a quadrotor flying over a
//! latency-injected network link.
//!
//! - [`model`]: vehicle and obstacle dynamics, forward-Euler stepping
//! - [`delay`]: loop-delay estimation from command echoes
//! - [`predictor`]: forward prediction of delayed observations
//! - [`nmpc`]: receding-horizon problem and solver
//! - [`channel`]: virtual-clock delayed message channels
//! - [`tunnel`]: UDP wire format and tunnel endpoints
//! - [`trajectory`]: reference trajectories
//! - [`harness`]: closed-loop scenarios, metrics and logs

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Index loops mirror the stage-wise math.
#![allow(clippy::needless_range_loop)]

pub mod channel;
pub mod delay;
pub mod harness;
pub mod model;
pub mod nmpc;
pub mod predictor;
pub mod trajectory;
pub mod tunnel;

pub use channel::{DelayModel, SimChannel, TimestampedMessage};
pub use delay::{DelayEstimate, DelayEstimator};
pub use harness::{run_scenario, RunMetrics, ScenarioConfig, ScenarioKind};
pub use model::{ControlInput, ObstacleState, UavParams, UavState, Vec3};
pub use nmpc::{McpBounds, McpSolution, McpWeights, OcpProblem, Solver, SolverSettings};
pub use predictor::{PredictedObstacle, PredictedState};
