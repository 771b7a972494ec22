//! Quadrotor translational dynamics with first-order attitude lags, and the
//! ballistic obstacle model.
//!
//! Thrust is mass-normalized everywhere in this crate: `ControlInput::thrust`
//! is an acceleration in m/s², so hover thrust equals [`GRAVITY`].

use nalgebra::{Matrix3, SVector, Vector3};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Stacked vehicle state `[p; v; phi; theta]` used by the optimizer.
pub type StateVector = SVector<f64, 8>;
/// Stacked input `[thrust; phi_d; theta_d]`.
pub type InputVector = SVector<f64, 3>;

pub const GRAVITY: f64 = 9.81;

/// Gravity vector in the world frame (Z up).
pub fn gravity() -> Vec3 {
    Vec3::new(0.0, 0.0, -GRAVITY)
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("state became non-finite at t = {t}")]
    NonFinite { t: f64 },
    #[error("attitude left the operating regime at t = {t} (phi = {phi}, theta = {theta})")]
    AttitudeOutOfRange { t: f64, phi: f64, theta: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParams(&'static str),
    #[error("time step must be positive, got {0}")]
    InvalidStep(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UavState {
    pub p: Vec3,
    pub v: Vec3,
    pub phi: f64,
    pub theta: f64,
    pub t: f64,
}

impl UavState {
    pub fn hover_at(p: Vec3, t: f64) -> Self {
        Self {
            p,
            v: Vec3::zeros(),
            phi: 0.0,
            theta: 0.0,
            t,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.p.iter().chain(self.v.iter()).all(|x| x.is_finite())
            && self.phi.is_finite()
            && self.theta.is_finite()
            && self.t.is_finite()
    }

    pub fn to_vector(&self) -> StateVector {
        StateVector::from_column_slice(&[
            self.p.x, self.p.y, self.p.z, self.v.x, self.v.y, self.v.z, self.phi, self.theta,
        ])
    }

    pub fn from_vector(x: &StateVector, t: f64) -> Self {
        Self {
            p: Vec3::new(x[0], x[1], x[2]),
            v: Vec3::new(x[3], x[4], x[5]),
            phi: x[6],
            theta: x[7],
            t,
        }
    }

    fn check(self) -> Result<Self, ModelError> {
        if !self.is_finite() {
            return Err(ModelError::NonFinite { t: self.t });
        }
        if self.phi.abs() >= std::f64::consts::FRAC_PI_2 || self.theta.abs() >= std::f64::consts::FRAC_PI_2 {
            return Err(ModelError::AttitudeOutOfRange {
                t: self.t,
                phi: self.phi,
                theta: self.theta,
            });
        }
        Ok(self)
    }
}

/// Mass-normalized thrust plus desired roll and pitch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlInput {
    pub thrust: f64,
    pub phi_d: f64,
    pub theta_d: f64,
}

impl ControlInput {
    pub const fn new(thrust: f64, phi_d: f64, theta_d: f64) -> Self {
        Self { thrust, phi_d, theta_d }
    }

    /// Level attitude, thrust exactly cancelling gravity.
    pub const fn hover() -> Self {
        Self::new(GRAVITY, 0.0, 0.0)
    }

    pub fn to_vector(&self) -> InputVector {
        InputVector::new(self.thrust, self.phi_d, self.theta_d)
    }

    pub fn from_vector(u: &InputVector) -> Self {
        Self::new(u[0], u[1], u[2])
    }

    pub fn is_finite(&self) -> bool {
        self.thrust.is_finite() && self.phi_d.is_finite() && self.theta_d.is_finite()
    }
}

impl Default for ControlInput {
    fn default() -> Self {
        Self::hover()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UavParams {
    /// Vehicle mass in kg. Only used to convert normalized thrust to newtons.
    pub mass: f64,
    /// Diagonal of the linear drag matrix, 1/s.
    pub drag: Vec3,
    pub alpha_phi: f64,
    pub alpha_theta: f64,
    pub k_phi: f64,
    pub k_theta: f64,
}

impl Default for UavParams {
    fn default() -> Self {
        Self {
            mass: 1.0,
            drag: Vec3::new(0.1, 0.1, 0.2),
            alpha_phi: 0.15,
            alpha_theta: 0.15,
            k_phi: 1.0,
            k_theta: 1.0,
        }
    }
}

impl UavParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.mass > 0.0) {
            return Err(ModelError::InvalidParams("mass must be positive"));
        }
        if !(self.alpha_phi > 0.0 && self.alpha_theta > 0.0) {
            return Err(ModelError::InvalidParams("attitude time constants must be positive"));
        }
        if self.drag.iter().any(|d| !(*d >= 0.0)) {
            return Err(ModelError::InvalidParams("drag coefficients must be non-negative"));
        }
        if !(self.k_phi > 0.0 && self.k_theta > 0.0) {
            return Err(ModelError::InvalidParams("attitude gains must be positive"));
        }
        Ok(())
    }

    pub fn thrust_newtons(&self, u: &ControlInput) -> f64 {
        u.thrust * self.mass
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObstacleState {
    pub p: Vec3,
    pub v: Vec3,
    /// Collision-sphere radius, m.
    pub radius: f64,
    pub t: f64,
}

/// World-from-body rotation, composed yaw-pitch-roll: `Rz(psi) * Ry(theta) * Rx(phi)`.
pub fn rotation_matrix(phi: f64, theta: f64, psi: f64) -> Mat3 {
    let (sf, cf) = phi.sin_cos();
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = psi.sin_cos();
    Mat3::new(
        cp * ct,
        cp * st * sf - sp * cf,
        cp * st * cf + sp * sf,
        sp * ct,
        sp * st * sf + cp * cf,
        sp * st * cf - cp * sf,
        -st,
        ct * sf,
        ct * cf,
    )
}

/// Body thrust direction `R(phi, theta, 0) * e_z`.
#[inline]
pub fn thrust_axis(phi: f64, theta: f64) -> Vec3 {
    let (sf, cf) = phi.sin_cos();
    let (st, ct) = theta.sin_cos();
    Vec3::new(st * cf, -sf, ct * cf)
}

/// Thrust vector in the world frame, rotated by the current attitude.
pub fn thrust_to_force(u: &ControlInput, phi: f64, theta: f64) -> Vec3 {
    thrust_axis(phi, theta) * u.thrust
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateDerivative {
    pub v: Vec3,
    pub a: Vec3,
    pub phi_dot: f64,
    pub theta_dot: f64,
}

/// Continuous dynamics. `u` is whatever input is acting on the vehicle right
/// now, i.e. the command issued one loop delay ago.
pub fn uav_derivative(s: &UavState, u: &ControlInput, params: &UavParams) -> StateDerivative {
    let a = thrust_to_force(u, s.phi, s.theta) + gravity() - params.drag.component_mul(&s.v);
    StateDerivative {
        v: s.v,
        a,
        phi_dot: (params.k_phi * u.phi_d - s.phi) / params.alpha_phi,
        theta_dot: (params.k_theta * u.theta_d - s.theta) / params.alpha_theta,
    }
}

/// One forward-Euler step of the vehicle dynamics.
pub fn step_uav(s: &UavState, u: &ControlInput, params: &UavParams, dt: f64) -> Result<UavState, ModelError> {
    if !(dt > 0.0) {
        return Err(ModelError::InvalidStep(dt));
    }
    Ok(euler(s, u, params, dt)).and_then(UavState::check)
}

/// Unchecked Euler step shared by the plant and the optimizer rollout.
#[inline]
pub(crate) fn euler(s: &UavState, u: &ControlInput, params: &UavParams, dt: f64) -> UavState {
    let d = uav_derivative(s, u, params);
    UavState {
        p: s.p + d.v * dt,
        v: s.v + d.a * dt,
        phi: s.phi + d.phi_dot * dt,
        theta: s.theta + d.theta_dot * dt,
        t: s.t + dt,
    }
}

/// One forward-Euler step of a body under gravity alone.
pub fn step_obstacle(o: &ObstacleState, dt: f64) -> ObstacleState {
    ObstacleState {
        p: o.p + o.v * dt,
        v: o.v + gravity() * dt,
        radius: o.radius,
        t: o.t + dt,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rx(a: f64) -> Mat3 {
        Mat3::new(1.0, 0.0, 0.0, 0.0, a.cos(), -a.sin(), 0.0, a.sin(), a.cos())
    }
    fn ry(a: f64) -> Mat3 {
        Mat3::new(a.cos(), 0.0, a.sin(), 0.0, 1.0, 0.0, -a.sin(), 0.0, a.cos())
    }
    fn rz(a: f64) -> Mat3 {
        Mat3::new(a.cos(), -a.sin(), 0.0, a.sin(), a.cos(), 0.0, 0.0, 0.0, 1.0)
    }

    fn no_drag() -> UavParams {
        UavParams {
            drag: Vec3::zeros(),
            ..Default::default()
        }
    }

    #[test]
    fn zero_angles_give_identity() {
        assert_eq!(rotation_matrix(0.0, 0.0, 0.0), Mat3::identity());
        let f = rotation_matrix(0.0, 0.0, 0.0) * Vec3::new(0.0, 0.0, 9.81);
        assert_eq!(f, Vec3::new(0.0, 0.0, 9.81));
    }

    #[test]
    fn rotation_matches_elementary_product() {
        for &(phi, theta, psi) in &[(0.1, 0.2, 0.0), (-0.3, 0.25, 0.7), (0.4, -0.1, -1.2)] {
            let expected = rz(psi) * ry(theta) * rx(phi);
            let got = rotation_matrix(phi, theta, psi);
            assert!((expected - got).abs().max() < 1e-12, "{phi} {theta} {psi}");
        }
    }

    #[test]
    fn thrust_mapping_examples() {
        let hover = ControlInput::hover();
        assert_eq!(thrust_to_force(&hover, 0.0, 0.0), Vec3::new(0.0, 0.0, 9.81));
        let off = ControlInput::new(0.0, 0.2, -0.1);
        assert_eq!(thrust_to_force(&off, 0.3, 0.2), Vec3::zeros());
        let pitched = thrust_to_force(&hover, 0.0, 0.1);
        let oracle = ry(0.1) * Vec3::new(0.0, 0.0, 9.81);
        assert!((pitched - oracle).norm() < 1e-12);
        assert!((pitched - Vec3::new(9.81 * 0.1f64.sin(), 0.0, 9.81 * 0.1f64.cos())).norm() < 1e-12);
    }

    #[test]
    fn derivative_examples() {
        let s = UavState::hover_at(Vec3::new(0.0, 0.0, 1.0), 0.0);
        let d = uav_derivative(&s, &ControlInput::hover(), &no_drag());
        assert_eq!(d.a, Vec3::zeros());
        assert_eq!((d.phi_dot, d.theta_dot), (0.0, 0.0));

        let params = UavParams {
            alpha_phi: 0.2,
            ..no_drag()
        };
        let d = uav_derivative(&s, &ControlInput::new(9.81, 0.1, 0.0), &params);
        assert!((d.phi_dot - 0.5).abs() < 1e-15);

        let moving = UavState {
            v: Vec3::new(1.0, 0.0, 0.0),
            ..s
        };
        let d = uav_derivative(&moving, &ControlInput::hover(), &UavParams::default());
        assert!((d.a - Vec3::new(-0.1, 0.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn hover_is_a_fixed_point() {
        let s = UavState::hover_at(Vec3::new(0.3, -0.2, 0.8), 0.0);
        let next = step_uav(&s, &ControlInput::hover(), &UavParams::default(), 0.01).unwrap();
        assert_eq!(next.p, s.p);
        assert_eq!(next.v, s.v);
        assert_eq!((next.phi, next.theta), (0.0, 0.0));
        assert!((next.t - 0.01).abs() < 1e-15);
    }

    #[test]
    fn pure_translation() {
        let s = UavState {
            v: Vec3::new(1.0, 0.0, 0.0),
            ..UavState::hover_at(Vec3::zeros(), 0.0)
        };
        let next = step_uav(&s, &ControlInput::hover(), &no_drag(), 0.033).unwrap();
        assert!((next.p - Vec3::new(0.033, 0.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn step_rejects_bad_dt_and_blowup() {
        let s = UavState::hover_at(Vec3::zeros(), 0.0);
        assert!(matches!(
            step_uav(&s, &ControlInput::hover(), &UavParams::default(), 0.0),
            Err(ModelError::InvalidStep(_))
        ));
        let u = ControlInput::new(f64::INFINITY, 0.0, 0.0);
        assert!(matches!(
            step_uav(&s, &u, &UavParams::default(), 0.01),
            Err(ModelError::NonFinite { .. })
        ));
        let tilted = UavState { phi: 1.5, ..s };
        let u = ControlInput::new(9.81, 3.0, 0.0);
        assert!(matches!(
            step_uav(&tilted, &u, &UavParams::default(), 0.1),
            Err(ModelError::AttitudeOutOfRange { .. })
        ));
    }

    fn integrate(s0: &UavState, u: &ControlInput, p: &UavParams, horizon: f64, n: usize) -> UavState {
        let dt = horizon / n as f64;
        (0..n).fold(*s0, |s, _| step_uav(&s, u, p, dt).unwrap())
    }

    #[test]
    fn euler_converges_at_first_order() {
        let s0 = UavState {
            p: Vec3::new(0.1, -0.2, 0.8),
            v: Vec3::new(0.5, -0.3, 0.2),
            phi: 0.05,
            theta: -0.08,
            t: 0.0,
        };
        let u = ControlInput::new(10.5, 0.2, 0.15);
        let p = UavParams::default();
        let reference = integrate(&s0, &u, &p, 1.0, 64 * 32);
        let coarse = integrate(&s0, &u, &p, 1.0, 32);
        let fine = integrate(&s0, &u, &p, 1.0, 64);
        let err = |s: &UavState| (s.to_vector() - reference.to_vector()).norm();
        let ratio = err(&coarse) / err(&fine);
        assert!((ratio - 2.0).abs() < 0.15, "ratio {ratio}");
    }

    #[test]
    fn obstacle_steps() {
        let o = ObstacleState {
            p: Vec3::new(1.0, 2.0, 3.0),
            v: Vec3::zeros(),
            radius: 0.1,
            t: 0.0,
        };
        let n = step_obstacle(&o, 0.1);
        assert_eq!(n.p, o.p);
        assert!((n.v - Vec3::new(0.0, 0.0, -0.981)).norm() < 1e-15);

        let o2 = ObstacleState {
            v: Vec3::new(1.0, 0.0, 0.0),
            ..o
        };
        let n2 = step_obstacle(&o2, 0.1);
        assert!((n2.p - (o.p + Vec3::new(0.1, 0.0, 0.0))).norm() < 1e-15);

        // Closed-form Euler sum: z drop = -g dt^2 n(n-1)/2.
        let dt = 1.0 / 30.0;
        let end = (0..30).fold(o, |s, _| step_obstacle(&s, dt));
        assert!((end.v.z + 9.81).abs() < 1e-12);
        let drop = -GRAVITY * dt * dt * (30.0 * 29.0 / 2.0);
        assert!((end.p.z - o.p.z - drop).abs() < 1e-12);
        assert!((drop + 4.7415).abs() < 1e-4);
    }

    #[test]
    fn attitude_lag_converges() {
        let p = UavParams::default();
        let dt = 0.001;
        let u = ControlInput::new(GRAVITY, 0.2, -0.1);
        let steps = (5.0 * p.alpha_phi / dt) as usize;
        let s = integrate(
            &UavState::hover_at(Vec3::zeros(), 0.0),
            &u,
            &p,
            steps as f64 * dt,
            steps,
        );
        assert!((s.phi - p.k_phi * 0.2).abs() <= 0.01 * 0.2);
        assert!((s.theta - p.k_theta * -0.1).abs() <= 0.01 * 0.1);
    }

    #[test]
    fn balanced_thrust_conserves_vertical_velocity() {
        let s = UavState {
            v: Vec3::new(0.0, 0.0, 0.4),
            phi: 0.1,
            theta: -0.05,
            ..UavState::hover_at(Vec3::zeros(), 0.0)
        };
        let u = ControlInput::new(GRAVITY / (s.phi.cos() * s.theta.cos()), 0.1, -0.05);
        let next = step_uav(&s, &u, &no_drag(), 0.02).unwrap();
        assert!((next.v.z - 0.4).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn rotation_is_proper_orthonormal(
            phi in -1.57f64..1.57, theta in -1.57f64..1.57, psi in -1.57f64..1.57
        ) {
            let r = rotation_matrix(phi, theta, psi);
            prop_assert!((r.transpose() * r - Mat3::identity()).abs().max() < 1e-10);
            prop_assert!((r.determinant() - 1.0).abs() < 1e-10);
            let axis = thrust_axis(phi, theta);
            let col = rotation_matrix(phi, theta, 0.0).column(2).into_owned();
            prop_assert!((axis - col).norm() < 1e-14);
        }

        #[test]
        fn stepping_is_deterministic(
            vx in -2.0f64..2.0, phi in -0.5f64..0.5, f in 0.0f64..20.0, dt in 1e-3f64..0.05
        ) {
            let s = UavState { v: Vec3::new(vx, 0.1, -0.2), phi, ..UavState::hover_at(Vec3::zeros(), 0.0) };
            let u = ControlInput::new(f, 0.1, -0.1);
            let a = step_uav(&s, &u, &UavParams::default(), dt).unwrap();
            let b = step_uav(&s, &u, &UavParams::default(), dt).unwrap();
            prop_assert_eq!(a.to_vector().map(f64::to_bits), b.to_vector().map(f64::to_bits));
        }
    }
}
