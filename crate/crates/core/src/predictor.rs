//! Forward prediction of delayed observations.
//!
//! Odometry arriving at the controller is already one delay old, and the
//! command computed from it lands one delay later. The predictor pushes the
//! observed vehicle and obstacle states forward by the estimated delay so the
//! optimizer starts from the state that will exist when its command applies.

use thiserror::Error;

use crate::model::{gravity, thrust_to_force, ControlInput, ObstacleState, UavParams, UavState, Vec3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PredictError {
    #[error("non-finite input to predictor")]
    NonFiniteInput,
    #[error("prediction horizon must be non-negative, got {0}")]
    NegativeHorizon(f64),
    #[error("predicted and actual logs share no aligned samples")]
    EmptyOverlap,
}

/// Which velocity advances the position over the prediction horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PositionVelocity {
    /// Observed velocity at the start of the horizon.
    Current,
    /// Velocity predicted at the end of the horizon.
    #[default]
    Predicted,
}

/// Discretization of the attitude lag over the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AttitudeForm {
    /// Implicit Euler: `(1 + tau/alpha)^-1 (phi + K tau/alpha phi_d)`.
    #[default]
    Implicit,
    /// `(1 + tau/alpha)^-1 (phi - K/alpha phi_d) tau`, kept for comparison
    /// only. It does not reduce to the observation at zero delay.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PredictorOptions {
    pub position_velocity: PositionVelocity,
    pub attitude: AttitudeForm,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictedState {
    pub p: Vec3,
    pub v: Vec3,
    pub phi: f64,
    pub theta: f64,
    pub tau_used: f64,
    /// Time the prediction refers to: observation time plus `tau_used`.
    pub t: f64,
}

impl PredictedState {
    pub fn as_state(&self) -> UavState {
        UavState {
            p: self.p,
            v: self.v,
            phi: self.phi,
            theta: self.theta,
            t: self.t,
        }
    }

    /// No prediction: the observation itself.
    pub fn identity(s: &UavState) -> Self {
        Self {
            p: s.p,
            v: s.v,
            phi: s.phi,
            theta: s.theta,
            tau_used: 0.0,
            t: s.t,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictedObstacle {
    pub p: Vec3,
    pub v: Vec3,
    pub t: f64,
}

fn check_horizon(tau: f64) -> Result<(), PredictError> {
    if !tau.is_finite() {
        return Err(PredictError::NonFiniteInput);
    }
    if tau < 0.0 {
        return Err(PredictError::NegativeHorizon(tau));
    }
    Ok(())
}

/// Predicts the vehicle state `tau` seconds after `observed`, assuming
/// `last_input` (the most recent echoed command) keeps acting.
pub fn predict_uav(
    observed: &UavState,
    last_input: &ControlInput,
    tau: f64,
    params: &UavParams,
    options: PredictorOptions,
) -> Result<PredictedState, PredictError> {
    check_horizon(tau)?;
    if !observed.is_finite() || !last_input.is_finite() {
        return Err(PredictError::NonFiniteInput);
    }

    let accel = thrust_to_force(last_input, observed.phi, observed.theta) + gravity();
    let v = (observed.v + accel * tau).component_div(&params.drag.map(|a| 1.0 + a * tau));
    let p = match options.position_velocity {
        PositionVelocity::Predicted => observed.p + v * tau,
        PositionVelocity::Current => observed.p + observed.v * tau,
    };
    let lag = |angle: f64, desired: f64, gain: f64, alpha: f64| match options.attitude {
        AttitudeForm::Implicit => (angle + gain * tau / alpha * desired) / (1.0 + tau / alpha),
        AttitudeForm::Literal => (angle - gain / alpha * desired) * tau / (1.0 + tau / alpha),
    };
    let phi = lag(observed.phi, last_input.phi_d, params.k_phi, params.alpha_phi);
    let theta = lag(observed.theta, last_input.theta_d, params.k_theta, params.alpha_theta);

    let out = PredictedState {
        p,
        v,
        phi,
        theta,
        tau_used: tau,
        t: observed.t + tau,
    };
    if !out.as_state().is_finite() {
        return Err(PredictError::NonFiniteInput);
    }
    Ok(out)
}

/// First-order ballistic prediction of an obstacle.
pub fn predict_obstacle(observed: &ObstacleState, tau: f64) -> Result<PredictedObstacle, PredictError> {
    check_horizon(tau)?;
    if observed.p.iter().chain(observed.v.iter()).any(|x| !x.is_finite()) {
        return Err(PredictError::NonFiniteInput);
    }
    Ok(PredictedObstacle {
        p: observed.p + observed.v * tau,
        v: observed.v + gravity() * tau,
        t: observed.t + tau,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimedPosition {
    pub t: f64,
    pub p: Vec3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionErrors {
    /// Target times of the matched predictions.
    pub t: Vec<f64>,
    pub per_axis: Vec<Vec3>,
    pub euclidean: Vec<f64>,
    pub rms: Vec3,
    pub rms_euclidean: f64,
}

/// Compares predictions (stamped with the time they refer to) against the
/// actual trajectory. Each prediction is paired with the nearest actual
/// sample within `tolerance` seconds; unmatched predictions are skipped.
/// `actual` must be sorted by time.
pub fn prediction_error(
    predicted: &[TimedPosition],
    actual: &[TimedPosition],
    tolerance: f64,
) -> Result<PredictionErrors, PredictError> {
    let mut out = PredictionErrors {
        t: Vec::new(),
        per_axis: Vec::new(),
        euclidean: Vec::new(),
        rms: Vec3::zeros(),
        rms_euclidean: 0.0,
    };
    for pred in predicted {
        let idx = actual.partition_point(|a| a.t < pred.t);
        let nearest = [idx.checked_sub(1), Some(idx)]
            .into_iter()
            .flatten()
            .filter_map(|i| actual.get(i))
            .min_by(|a, b| (a.t - pred.t).abs().total_cmp(&(b.t - pred.t).abs()));
        let Some(act) = nearest.filter(|a| (a.t - pred.t).abs() <= tolerance) else {
            continue;
        };
        let e = (pred.p - act.p).abs();
        out.t.push(pred.t);
        out.euclidean.push(e.norm());
        out.per_axis.push(e);
    }
    if out.per_axis.is_empty() {
        return Err(PredictError::EmptyOverlap);
    }
    let n = out.per_axis.len() as f64;
    out.rms = (out.per_axis.iter().map(|e| e.component_mul(e)).sum::<Vec3>() / n).map(f64::sqrt);
    out.rms_euclidean = (out.euclidean.iter().map(|e| e * e).sum::<f64>() / n).sqrt();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::step_uav;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn opts() -> PredictorOptions {
        PredictorOptions::default()
    }

    fn sample_state(rng: &mut ChaCha8Rng) -> UavState {
        UavState {
            p: Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(0.5..1.5),
            ),
            v: Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-0.5..0.5),
            ),
            phi: rng.random_range(-0.2..0.2),
            theta: rng.random_range(-0.2..0.2),
            t: 3.0,
        }
    }

    fn sample_input(rng: &mut ChaCha8Rng) -> ControlInput {
        ControlInput::new(
            rng.random_range(8.0..12.0),
            rng.random_range(-0.2..0.2),
            rng.random_range(-0.2..0.2),
        )
    }

    fn simulate(s: &UavState, u: &ControlInput, p: &UavParams, tau: f64) -> UavState {
        let n = 4000;
        let dt = tau / n as f64;
        (0..n).fold(*s, |s, _| step_uav(&s, u, p, dt).unwrap())
    }

    #[test]
    fn zero_delay_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let s = sample_state(&mut rng);
            let u = sample_input(&mut rng);
            let out = predict_uav(&s, &u, 0.0, &UavParams::default(), opts()).unwrap();
            assert_eq!(out.as_state(), s);
        }
        let o = ObstacleState {
            p: Vec3::new(1.0, 2.0, 3.0),
            v: Vec3::new(-1.0, 0.5, 2.0),
            radius: 0.2,
            t: 1.0,
        };
        let po = predict_obstacle(&o, 0.0).unwrap();
        assert_eq!((po.p, po.v, po.t), (o.p, o.v, o.t));
    }

    #[test]
    fn hover_is_a_fixed_point() {
        let params = UavParams {
            drag: Vec3::zeros(),
            ..Default::default()
        };
        let s = UavState::hover_at(Vec3::new(0.0, 1.0, 0.8), 0.0);
        let out = predict_uav(&s, &ControlInput::hover(), 0.067, &params, opts()).unwrap();
        assert_eq!(out.v, Vec3::zeros());
        assert_eq!(out.p, s.p);
        assert_eq!((out.phi, out.theta), (0.0, 0.0));
    }

    #[test]
    fn implicit_drag_example() {
        let params = UavParams {
            drag: Vec3::new(0.1, 0.0, 0.0),
            ..Default::default()
        };
        let s = UavState {
            v: Vec3::new(1.0, 0.0, 0.0),
            ..UavState::hover_at(Vec3::new(0.5, 0.0, 1.0), 0.0)
        };
        let out = predict_uav(&s, &ControlInput::hover(), 0.1, &params, opts()).unwrap();
        assert!((out.v.x - 1.0 / 1.01).abs() < 1e-12);
        assert!((out.v.x - 0.990099).abs() < 1e-6);
        assert!((out.p.x - (0.5 + 0.0990099)).abs() < 1e-7);

        let current = PredictorOptions {
            position_velocity: PositionVelocity::Current,
            ..opts()
        };
        let out = predict_uav(&s, &ControlInput::hover(), 0.1, &params, current).unwrap();
        assert!((out.p.x - 0.6).abs() < 1e-12);
    }

    #[test]
    fn obstacle_examples() {
        let o = ObstacleState {
            p: Vec3::new(1.0, 0.0, 2.0),
            v: Vec3::zeros(),
            radius: 0.2,
            t: 0.0,
        };
        let po = predict_obstacle(&o, 0.1).unwrap();
        assert_eq!(po.p, o.p);
        assert!((po.v - Vec3::new(0.0, 0.0, -0.981)).norm() < 1e-15);

        let o = ObstacleState {
            v: Vec3::new(2.0, 0.0, 1.0),
            ..o
        };
        let po = predict_obstacle(&o, 0.067).unwrap();
        assert!((po.p - (o.p + Vec3::new(0.134, 0.0, 0.067))).norm() < 1e-12);
        assert!((po.v - Vec3::new(2.0, 0.0, 1.0 - 0.65727)).norm() < 1e-12);
    }

    #[test]
    fn rejects_bad_inputs() {
        let s = UavState::hover_at(Vec3::zeros(), 0.0);
        let p = UavParams::default();
        assert!(matches!(
            predict_uav(&s, &ControlInput::hover(), -0.1, &p, opts()),
            Err(PredictError::NegativeHorizon(_))
        ));
        let bad = UavState { phi: f64::NAN, ..s };
        assert_eq!(
            predict_uav(&bad, &ControlInput::hover(), 0.1, &p, opts()),
            Err(PredictError::NonFiniteInput)
        );
    }

    struct Truth {
        end: UavState,
        /// Largest `|a(t)|` along the path.
        peak_accel: f64,
        /// Largest `|a(t) - a(0)|` along the path.
        accel_drift: f64,
    }

    fn simulate_tracking_accel(s: &UavState, u: &ControlInput, p: &UavParams, tau: f64) -> Truth {
        let n = 4000;
        let dt = tau / n as f64;
        let a0 = crate::model::uav_derivative(s, u, p).a;
        let (mut peak, mut drift) = (0.0f64, 0.0f64);
        let mut x = *s;
        for i in 0..=n {
            let a = crate::model::uav_derivative(&x, u, p).a;
            peak = peak.max(a.norm());
            drift = drift.max((a - a0).norm());
            if i < n {
                x = step_uav(&x, u, p, dt).unwrap();
            }
        }
        Truth {
            end: x,
            peak_accel: peak,
            accel_drift: drift,
        }
    }

    #[test]
    fn matches_fine_step_simulation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let params = UavParams::default();
        let tau = 0.067;
        let current = PredictorOptions {
            position_velocity: PositionVelocity::Current,
            ..opts()
        };
        for _ in 0..100 {
            let s = sample_state(&mut rng);
            let u = sample_input(&mut rng);
            let truth = simulate_tracking_accel(&s, &u, &params, tau);
            let tol = 0.5 * truth.peak_accel * tau * tau + 0.01 * s.v.norm() * tau;

            // p + v tau: the Taylor remainder bound applies directly.
            let pred = predict_uav(&s, &u, tau, &params, current).unwrap();
            for i in 0..3 {
                let err = (pred.p[i] - truth.end.p[i]).abs();
                assert!(err <= tol, "current, axis {i}: {err} > {tol}");
            }

            // p + v_hat tau extrapolates a(0) over the interval, so a change of
            // acceleration along the way adds to the bound.
            let pred = predict_uav(&s, &u, tau, &params, opts()).unwrap();
            let tol = tol + 0.5 * truth.accel_drift * tau * tau;
            for i in 0..3 {
                let err = (pred.p[i] - truth.end.p[i]).abs();
                assert!(err <= tol, "predicted, axis {i}: {err} > {tol}");
            }
        }
    }

    fn max_component_error(taus: &[f64], range: std::ops::Range<usize>, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = UavParams::default();
        let cases: Vec<_> = (0..40)
            .map(|_| (sample_state(&mut rng), sample_input(&mut rng)))
            .collect();
        taus.iter()
            .map(|&tau| {
                cases
                    .iter()
                    .map(|(s, u)| {
                        let truth = simulate(s, u, &params, tau);
                        let pred = predict_uav(s, u, tau, &params, opts()).unwrap();
                        let d = pred.as_state().to_vector() - truth.to_vector();
                        range.clone().map(|i| d[i].abs()).fold(0.0, f64::max)
                    })
                    .fold(0.0, f64::max)
            })
            .collect()
    }

    #[test]
    fn position_error_shrinks_at_second_order() {
        let taus = [0.02, 0.04, 0.08, 0.16];
        let errs = max_component_error(&taus, 0..3, 5);
        let slope = log_log_slope(&taus, &errs);
        assert!(slope >= 2.0, "slope {slope}, errors {errs:?}");
    }

    // Velocity and attitude carry a third-order term of opposite sign, so the
    // quadratic rate only shows once tau is small against the attitude lag.
    #[test]
    fn velocity_and_attitude_error_is_second_order_for_small_tau() {
        let taus = [0.00125, 0.0025, 0.005, 0.01];
        for range in [3..6, 6..8] {
            let errs = max_component_error(&taus, range.clone(), 5);
            let slope = log_log_slope(&taus, &errs);
            assert!(slope > 1.9, "{range:?}: slope {slope}, errors {errs:?}");
        }
    }

    fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
        let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
        let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
        let n = lx.len() as f64;
        let mx = lx.iter().sum::<f64>() / n;
        let my = ly.iter().sum::<f64>() / n;
        let cov: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
        let var: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
        cov / var
    }

    #[test]
    fn literal_attitude_form_breaks_zero_delay_identity() {
        let s = UavState {
            phi: 0.1,
            ..UavState::hover_at(Vec3::zeros(), 0.0)
        };
        let literal = PredictorOptions {
            attitude: AttitudeForm::Literal,
            ..opts()
        };
        let out = predict_uav(&s, &ControlInput::hover(), 0.0, &UavParams::default(), literal).unwrap();
        assert_eq!(out.phi, 0.0);
    }

    #[test]
    fn prediction_error_examples() {
        let traj: Vec<TimedPosition> = (0..10)
            .map(|i| TimedPosition {
                t: i as f64 * 0.1,
                p: Vec3::new(i as f64, 0.0, 1.0),
            })
            .collect();
        let same = prediction_error(&traj, &traj, 0.05).unwrap();
        assert_eq!(same.rms_euclidean, 0.0);

        let shifted: Vec<_> = traj
            .iter()
            .map(|s| TimedPosition {
                t: s.t + 0.01,
                p: s.p + Vec3::new(0.03, 0.04, 0.0),
            })
            .collect();
        let e = prediction_error(&shifted, &traj, 0.05).unwrap();
        assert_eq!(e.euclidean.len(), 10);
        assert!(e.euclidean.iter().all(|x| (x - 0.05).abs() < 1e-12));
        assert!((e.rms_euclidean - 0.05).abs() < 1e-12);

        let far: Vec<_> = traj.iter().map(|s| TimedPosition { t: s.t + 5.0, ..*s }).collect();
        assert_eq!(prediction_error(&far, &traj, 0.05), Err(PredictError::EmptyOverlap));
    }

    proptest! {
        #[test]
        fn drag_contracts_velocity(vx in -3.0f64..3.0, vy in -3.0f64..3.0, vz in -3.0f64..3.0, tau in 0.0f64..0.5) {
            // Level attitude with hover thrust: U + G = 0.
            let s = UavState { v: Vec3::new(vx, vy, vz), ..UavState::hover_at(Vec3::zeros(), 0.0) };
            let out = predict_uav(&s, &ControlInput::hover(), tau, &UavParams::default(), opts()).unwrap();
            prop_assert!(out.v.norm() <= s.v.norm() + 1e-15);
        }

        #[test]
        fn attitude_equilibrium_is_preserved(phi_d in -0.3f64..0.3, tau in 0.0f64..1.0) {
            let params = UavParams::default();
            let s = UavState { phi: params.k_phi * phi_d, theta: params.k_theta * phi_d, ..UavState::hover_at(Vec3::zeros(), 0.0) };
            let u = ControlInput::new(9.81, phi_d, phi_d);
            let out = predict_uav(&s, &u, tau, &params, opts()).unwrap();
            prop_assert!((out.phi - s.phi).abs() < 1e-15);
            prop_assert!((out.theta - s.theta).abs() < 1e-15);
        }
    }
}
