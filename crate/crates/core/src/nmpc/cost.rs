use crate::model::{euler, thrust_axis, ControlInput, InputVector, StateVector, UavParams, UavState, Vec3};

use super::{NmpcError, OcpProblem};

/// Obstacle constraint value `(r_s + r_d)^2 - |p_o - p|^2`. Positive inside
/// the keep-out sphere, zero on its surface.
pub fn obstacle_violation(p: &Vec3, p_o: &Vec3, r_s: f64, r_d: f64) -> f64 {
    let r = r_s + r_d;
    r * r - (p_o - p).norm_squared()
}

#[inline]
fn step(x: &StateVector, u: &ControlInput, params: &UavParams, ts: f64) -> StateVector {
    euler(&UavState::from_vector(x, 0.0), u, params, ts).to_vector()
}

/// Forward-Euler rollout, `N + 1` states starting with `x0`.
pub fn rollout(
    x0: &StateVector,
    u_seq: &[ControlInput],
    params: &UavParams,
    ts: f64,
) -> Result<Vec<StateVector>, NmpcError> {
    let mut xs = Vec::with_capacity(u_seq.len() + 1);
    xs.push(*x0);
    for u in u_seq {
        let next = step(xs.last().unwrap(), u, params, ts);
        if !next.iter().all(|v| v.is_finite()) {
            return Err(NmpcError::NonFinite);
        }
        xs.push(next);
    }
    Ok(xs)
}

fn check_len(prob: &OcpProblem, n: usize) -> Result<(), NmpcError> {
    if n != prob.horizon {
        return Err(NmpcError::InvalidProblem(format!(
            "input sequence has {n} entries, horizon is {}",
            prob.horizon
        )));
    }
    Ok(())
}

/// Tracking cost without obstacle terms. State terms cover stages `0..=N`,
/// input terms the `N` inputs, with `u_prev` preceding the first.
pub fn evaluate_cost(prob: &OcpProblem, u_seq: &[ControlInput]) -> Result<f64, NmpcError> {
    objective(prob, u_seq, 0.0, None)
}

/// Cost plus `rho * sum(max(0, h)^2)` over all obstacles and stages, with
/// the gradient with respect to each input when `grad` is given.
pub fn objective(
    prob: &OcpProblem,
    u_seq: &[ControlInput],
    rho: f64,
    grad: Option<&mut [InputVector]>,
) -> Result<f64, NmpcError> {
    check_len(prob, u_seq.len())?;
    let z: Vec<f64> = u_seq.iter().flat_map(|u| [u.thrust, u.phi_d, u.theta_d]).collect();
    let mut eval = Evaluator::new(prob);
    let value = match grad {
        Some(g) => {
            check_len(prob, g.len())?;
            let mut flat = vec![0.0; z.len()];
            let v = eval.eval(&z, rho, Some(&mut flat));
            for (gi, c) in g.iter_mut().zip(flat.chunks_exact(3)) {
                *gi = InputVector::new(c[0], c[1], c[2]);
            }
            v
        }
        None => eval.eval(&z, rho, None),
    };
    if value.is_finite() {
        Ok(value)
    } else {
        Err(NmpcError::NonFinite)
    }
}

#[inline]
pub(super) fn input_at(z: &[f64], j: usize) -> ControlInput {
    ControlInput::new(z[3 * j], z[3 * j + 1], z[3 * j + 2])
}

/// Reusable rollout/adjoint workspace over the flat decision vector
/// `[F_0, phi_d_0, theta_d_0, F_1, ...]`.
pub(super) struct Evaluator<'a> {
    prob: &'a OcpProblem,
    xs: Vec<StateVector>,
}

impl<'a> Evaluator<'a> {
    pub fn new(prob: &'a OcpProblem) -> Self {
        Self {
            prob,
            xs: vec![StateVector::zeros(); prob.horizon + 1],
        }
    }

    pub fn problem(&self) -> &'a OcpProblem {
        self.prob
    }

    /// Rolls out `z` and stores the states. Returns false on blow-up.
    fn forward(&mut self, z: &[f64]) -> bool {
        let prob = self.prob;
        self.xs[0] = prob.x0;
        for j in 0..prob.horizon {
            self.xs[j + 1] = step(&self.xs[j], &input_at(z, j), &prob.params, prob.ts);
        }
        self.xs.iter().all(|x| x.iter().all(|v| v.is_finite()))
    }

    /// Largest positive obstacle constraint value over stages `1..=N` of the
    /// last rollout. Stage 0 is the fixed initial state and cannot be moved.
    pub fn max_violation(&self) -> f64 {
        let mut worst = 0.0f64;
        for o in &self.prob.obstacles {
            for (x, po) in self.xs.iter().zip(&o.positions).skip(1) {
                let p = Vec3::new(x[0], x[1], x[2]);
                worst = worst.max(obstacle_violation(&p, po, o.safety_radius, o.radius));
            }
        }
        worst
    }

    pub fn violation_of(&mut self, z: &[f64]) -> f64 {
        self.forward(z);
        self.max_violation()
    }

    /// Objective value; writes the gradient into `grad` when given.
    /// Returns infinity if the rollout diverges.
    pub fn eval(&mut self, z: &[f64], rho: f64, grad: Option<&mut [f64]>) -> f64 {
        let prob = self.prob;
        let n = prob.horizon;
        if !self.forward(z) {
            return f64::INFINITY;
        }
        let qx = &prob.weights.state;
        let qu = &prob.weights.input;
        let qdu = &prob.weights.input_rate;
        let u_ref = prob.u_ref.to_vector();

        let mut cost = 0.0;
        let mut stage_grad = vec![StateVector::zeros(); n + 1];
        for j in 0..=n {
            let e = prob.reference[j] - self.xs[j];
            let we = qx.component_mul(&e);
            cost += e.dot(&we);
            // d/dx of (xd - x)' Q (xd - x)
            stage_grad[j] = -2.0 * we;
            if rho > 0.0 {
                let p = Vec3::new(self.xs[j][0], self.xs[j][1], self.xs[j][2]);
                for o in &prob.obstacles {
                    let po = o.positions[j];
                    let h = obstacle_violation(&p, &po, o.safety_radius, o.radius);
                    if h > 0.0 {
                        cost += rho * h * h;
                        let dp = (po - p) * (4.0 * rho * h);
                        stage_grad[j][0] += dp.x;
                        stage_grad[j][1] += dp.y;
                        stage_grad[j][2] += dp.z;
                    }
                }
            }
        }

        let mut prev = prob.u_prev.to_vector();
        let mut du_terms = vec![InputVector::zeros(); n];
        for j in 0..n {
            let u = input_at(z, j).to_vector();
            let du = u - prev;
            let dev = u - u_ref;
            cost += du.dot(&qdu.component_mul(&du)) + dev.dot(&qu.component_mul(&dev));
            du_terms[j] = du;
            prev = u;
        }

        let Some(g) = grad else {
            return cost;
        };

        for j in 0..n {
            let u = input_at(z, j).to_vector();
            let mut gu = 2.0 * qdu.component_mul(&du_terms[j]) + 2.0 * qu.component_mul(&(u - u_ref));
            if j + 1 < n {
                gu -= 2.0 * qdu.component_mul(&du_terms[j + 1]);
            }
            g[3 * j..3 * j + 3].copy_from_slice(gu.as_slice());
        }

        // Adjoint sweep: lambda_j = dJ/dx_j through the Euler recursion.
        let params = &prob.params;
        let ts = prob.ts;
        let mut lam = stage_grad[n];
        for j in (0..n).rev() {
            let x = &self.xs[j];
            let u = input_at(z, j);
            let (sf, cf) = x[6].sin_cos();
            let (st, ct) = x[7].sin_cos();
            let axis = thrust_axis(x[6], x[7]);
            let lv = Vec3::new(lam[3], lam[4], lam[5]);

            g[3 * j] += ts * axis.dot(&lv);
            g[3 * j + 1] += ts * params.k_phi / params.alpha_phi * lam[6];
            g[3 * j + 2] += ts * params.k_theta / params.alpha_theta * lam[7];

            let d_axis_phi = Vec3::new(-st * sf, -cf, -ct * sf);
            let d_axis_theta = Vec3::new(ct * cf, 0.0, -st * cf);
            let mut jt = StateVector::zeros();
            for i in 0..3 {
                jt[3 + i] = lam[i] - params.drag[i] * lam[3 + i];
            }
            jt[6] = u.thrust * d_axis_phi.dot(&lv) - lam[6] / params.alpha_phi;
            jt[7] = u.thrust * d_axis_theta.dot(&lv) - lam[7] / params.alpha_theta;
            lam = stage_grad[j] + lam + jt * ts;
        }
        cost
    }
}
