use std::collections::VecDeque;

use crate::model::ControlInput;

use super::cost::{input_at, Evaluator};
use super::{McpBounds, McpSolution, NmpcError, OcpProblem};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    /// Stop when the infinity norm of the projected gradient step falls below this.
    pub tol_grad: f64,
    /// Inner iteration cap, shared by all penalty rounds.
    pub max_iterations: usize,
    /// Curvature pairs kept by the quasi-Newton model.
    pub memory: usize,
    pub penalty_initial: f64,
    pub penalty_growth: f64,
    pub penalty_rounds: usize,
    /// Obstacle constraint value accepted as satisfied, m².
    pub violation_tol: f64,
    pub armijo: f64,
    pub max_backtracks: usize,
    /// Upper bound on the distance to a bound that counts as active.
    pub active_eps: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tol_grad: 1e-5,
            max_iterations: 400,
            memory: 10,
            penalty_initial: 1e3,
            penalty_growth: 10.0,
            penalty_rounds: 5,
            violation_tol: 1e-3,
            armijo: 1e-4,
            max_backtracks: 40,
            active_eps: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// Projected gradient below tolerance and obstacles clear.
    Converged,
    /// No admissible decrease along either the quasi-Newton or the projected
    /// gradient direction: first-order stationary for the projected iteration.
    Stalled,
    /// Iteration cap hit; the best iterate is returned.
    MaxIterations,
    /// Every penalty round finished but an obstacle stage is still violated.
    PenaltyExhausted,
}

/// Projected limited-memory quasi-Newton solver with quadratic-penalty
/// escalation for the obstacle constraints.
///
/// Input boxes and attitude rate bounds are enforced by a sweep that clamps
/// each stage into the box intersected with the rate window around its
/// (already projected) predecessor, the first stage against `u_prev`.
/// Every iterate, including the returned one, is therefore feasible for
/// both constraint classes. Coordinates pinned at a bound with the gradient
/// pushing outwards take plain scaled-gradient steps; the quasi-Newton model
/// acts on the rest.
#[derive(Debug, Clone)]
pub struct Solver {
    settings: SolverSettings,
    s_hist: VecDeque<Vec<f64>>,
    y_hist: VecDeque<Vec<f64>>,
    rho_hist: VecDeque<f64>,
}

impl Default for Solver {
    fn default() -> Self {
        Self::new(SolverSettings::default())
    }
}

impl Solver {
    pub fn new(settings: SolverSettings) -> Self {
        Self {
            settings,
            s_hist: VecDeque::new(),
            y_hist: VecDeque::new(),
            rho_hist: VecDeque::new(),
        }
    }

    pub fn settings(&self) -> &SolverSettings {
        &self.settings
    }

    pub fn solve(&mut self, prob: &OcpProblem, warm_start: Option<&[ControlInput]>) -> Result<McpSolution, NmpcError> {
        prob.validate()?;
        let n = prob.horizon;
        let mut z: Vec<f64> = match warm_start {
            Some(w) if w.len() == n => w.iter().flat_map(|u| [u.thrust, u.phi_d, u.theta_d]).collect(),
            Some(w) => {
                return Err(NmpcError::InvalidProblem(format!(
                    "warm start has {} inputs, horizon is {n}",
                    w.len()
                )))
            }
            None => prob
                .hover_sequence()
                .iter()
                .flat_map(|u| [u.thrust, u.phi_d, u.theta_d])
                .collect(),
        };
        project(&prob.bounds, &prob.u_prev, &mut z);

        let mut eval = Evaluator::new(prob);
        let rounds = if prob.obstacles.is_empty() {
            1
        } else {
            self.settings.penalty_rounds.max(1)
        };
        let mut rho = self.settings.penalty_initial;
        let mut iterations = 0;
        let mut termination = Termination::Converged;
        let mut rounds_used = 0;
        for _ in 0..rounds {
            rounds_used += 1;
            let budget = self.settings.max_iterations.saturating_sub(iterations);
            let (used, term) = self.minimize(&mut eval, &mut z, rho, budget)?;
            iterations += used;
            termination = term;
            if prob.obstacles.is_empty() || eval.violation_of(&z) <= self.settings.violation_tol {
                break;
            }
            if term == Termination::MaxIterations {
                break;
            }
            rho *= self.settings.penalty_growth;
        }

        let violation = eval.violation_of(&z);
        if !prob.obstacles.is_empty()
            && violation > self.settings.violation_tol
            && termination != Termination::MaxIterations
        {
            termination = Termination::PenaltyExhausted;
        }
        let cost = eval.eval(&z, 0.0, None);
        if !cost.is_finite() {
            return Err(NmpcError::NonFinite);
        }
        let u_seq: Vec<ControlInput> = (0..n).map(|j| input_at(&z, j)).collect();
        Ok(McpSolution {
            first: u_seq[0],
            u_seq,
            cost,
            iterations,
            max_constraint_violation: violation,
            converged: matches!(termination, Termination::Converged | Termination::Stalled),
            termination,
            penalty_rounds: rounds_used,
        })
    }

    /// Minimizes the penalized objective for fixed `rho` from `z`, in place.
    /// Accepted iterates never increase the objective.
    fn minimize(
        &mut self,
        eval: &mut Evaluator<'_>,
        z: &mut Vec<f64>,
        rho: f64,
        budget: usize,
    ) -> Result<(usize, Termination), NmpcError> {
        let s = self.settings;
        let (bounds, u_prev) = (eval.problem().bounds, eval.problem().u_prev);
        let dim = z.len();
        self.clear_memory();

        let mut g = vec![0.0; dim];
        let mut f = eval.eval(z, rho, Some(&mut g));
        if !f.is_finite() {
            return Err(NmpcError::NonFinite);
        }
        let mut trial = vec![0.0; dim];
        let mut g_trial = vec![0.0; dim];
        let mut dir = vec![0.0; dim];
        let mut masked = vec![0.0; dim];
        let mut active = vec![false; dim];

        for it in 0..budget {
            if projected_gradient_norm(&bounds, &u_prev, z, &g, &mut trial) <= s.tol_grad {
                return Ok((it, Termination::Converged));
            }

            let eps = s
                .active_eps
                .min(projected_gradient_norm(&bounds, &u_prev, z, &g, &mut trial));
            active_set(&bounds, &u_prev, z, &g, eps, &mut active);
            let mut quasi_newton = !self.s_hist.is_empty();
            loop {
                let t0 = if quasi_newton {
                    // Two-metric step: quasi-Newton on the free coordinates,
                    // scaled gradient on those held at a bound.
                    for i in 0..dim {
                        masked[i] = if active[i] { 0.0 } else { g[i] };
                    }
                    self.two_loop(&masked, &mut dir);
                    let gamma = self.gamma();
                    for i in 0..dim {
                        if active[i] {
                            dir[i] = -gamma * g[i];
                        }
                    }
                    1.0
                } else {
                    dir.iter_mut().zip(&g).for_each(|(d, gi)| *d = -gi);
                    let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                    (0.1 / gmax).min(1.0)
                };
                if let Some(f_new) = self.line_search(
                    eval,
                    z,
                    f,
                    &g,
                    &dir,
                    t0,
                    rho,
                    &bounds,
                    &u_prev,
                    &mut trial,
                    &mut g_trial,
                ) {
                    let mut sy = 0.0;
                    let mut yy = 0.0;
                    let sv: Vec<f64> = trial.iter().zip(z.iter()).map(|(a, b)| a - b).collect();
                    let yv: Vec<f64> = g_trial.iter().zip(&g).map(|(a, b)| a - b).collect();
                    for (si, yi) in sv.iter().zip(&yv) {
                        sy += si * yi;
                        yy += yi * yi;
                    }
                    if sy > 1e-12 * yy.max(1e-300) && sy > 0.0 {
                        self.push_pair(sv, yv, 1.0 / sy);
                    }
                    std::mem::swap(z, &mut trial);
                    std::mem::swap(&mut g, &mut g_trial);
                    f = f_new;
                    break;
                }
                if quasi_newton {
                    self.clear_memory();
                    quasi_newton = false;
                    continue;
                }
                return Ok((it + 1, Termination::Stalled));
            }
        }
        if projected_gradient_norm(&bounds, &u_prev, z, &g, &mut trial) <= s.tol_grad {
            return Ok((budget, Termination::Converged));
        }
        Ok((budget, Termination::MaxIterations))
    }

    /// Backtracking along the projected path `P(z + t d)`. On success `trial`
    /// and `g_trial` hold the accepted point and its gradient.
    #[allow(clippy::too_many_arguments)]
    fn line_search(
        &self,
        eval: &mut Evaluator<'_>,
        z: &[f64],
        f: f64,
        g: &[f64],
        dir: &[f64],
        t0: f64,
        rho: f64,
        bounds: &McpBounds,
        u_prev: &ControlInput,
        trial: &mut [f64],
        g_trial: &mut [f64],
    ) -> Option<f64> {
        let mut t = t0;
        for _ in 0..self.settings.max_backtracks {
            for i in 0..z.len() {
                trial[i] = z[i] + t * dir[i];
            }
            project(bounds, u_prev, trial);
            let slope: f64 = trial.iter().zip(z).zip(g).map(|((a, b), gi)| (a - b) * gi).sum();
            if slope >= 0.0 {
                if trial.iter().zip(z).all(|(a, b)| a == b) {
                    return None;
                }
                t *= 0.5;
                continue;
            }
            let f_new = eval.eval(trial, rho, Some(g_trial));
            if f_new.is_finite() && f_new <= f + self.settings.armijo * slope {
                return Some(f_new);
            }
            t *= 0.5;
        }
        None
    }

    fn two_loop(&self, g: &[f64], dir: &mut [f64]) {
        dir.iter_mut().zip(g).for_each(|(d, gi)| *d = *gi);
        let m = self.s_hist.len();
        let mut alpha = vec![0.0; m];
        for i in (0..m).rev() {
            let a = self.rho_hist[i] * dot(&self.s_hist[i], dir);
            alpha[i] = a;
            axpy(-a, &self.y_hist[i], dir);
        }
        let gamma = self.gamma();
        dir.iter_mut().for_each(|d| *d *= gamma);
        for i in 0..m {
            let b = self.rho_hist[i] * dot(&self.y_hist[i], dir);
            axpy(alpha[i] - b, &self.s_hist[i], dir);
        }
        dir.iter_mut().for_each(|d| *d = -*d);
    }

    fn gamma(&self) -> f64 {
        match (self.s_hist.back(), self.y_hist.back()) {
            (Some(s), Some(y)) => dot(s, y) / dot(y, y),
            _ => 1.0,
        }
    }

    fn push_pair(&mut self, s: Vec<f64>, y: Vec<f64>, rho: f64) {
        if self.s_hist.len() == self.settings.memory.max(1) {
            self.s_hist.pop_front();
            self.y_hist.pop_front();
            self.rho_hist.pop_front();
        }
        self.s_hist.push_back(s);
        self.y_hist.push_back(y);
        self.rho_hist.push_back(rho);
    }

    fn clear_memory(&mut self) {
        self.s_hist.clear();
        self.y_hist.clear();
        self.rho_hist.clear();
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += a * xi);
}

/// Sweep projection onto the input boxes and attitude rate windows.
pub(super) fn project(bounds: &McpBounds, u_prev: &ControlInput, z: &mut [f64]) {
    let (mut prev_phi, mut prev_theta) = (u_prev.phi_d, u_prev.theta_d);
    for u in z.chunks_exact_mut(3) {
        u[0] = u[0].clamp(bounds.u_min.thrust, bounds.u_max.thrust);
        // Rate window first, then the box: equals clamping into their
        // intersection whenever it is non-empty, and favors the box otherwise.
        u[1] = clamp_step(u[1], prev_phi, bounds.d_phi_max).clamp(bounds.u_min.phi_d, bounds.u_max.phi_d);
        u[2] = clamp_step(u[2], prev_theta, bounds.d_theta_max).clamp(bounds.u_min.theta_d, bounds.u_max.theta_d);
        prev_phi = u[1];
        prev_theta = u[2];
    }
}

/// Clamps `v` to `prev ± delta` so that `|v - prev| <= delta` also holds
/// after rounding.
fn clamp_step(v: f64, prev: f64, delta: f64) -> f64 {
    let mut u = v.clamp(prev - delta, prev + delta);
    while u - prev > delta {
        u = u.next_down();
    }
    while prev - u > delta {
        u = u.next_up();
    }
    u
}

/// Marks coordinates within `eps` of the bound of their sweep interval
/// whose gradient points outwards.
fn active_set(bounds: &McpBounds, u_prev: &ControlInput, z: &[f64], g: &[f64], eps: f64, active: &mut [bool]) {
    let (mut prev_phi, mut prev_theta) = (u_prev.phi_d, u_prev.theta_d);
    for (j, u) in z.chunks_exact(3).enumerate() {
        let i = 3 * j;
        let intervals = [
            (bounds.u_min.thrust, bounds.u_max.thrust),
            (
                bounds.u_min.phi_d.max(prev_phi - bounds.d_phi_max),
                bounds.u_max.phi_d.min(prev_phi + bounds.d_phi_max),
            ),
            (
                bounds.u_min.theta_d.max(prev_theta - bounds.d_theta_max),
                bounds.u_max.theta_d.min(prev_theta + bounds.d_theta_max),
            ),
        ];
        for (c, (lo, hi)) in intervals.into_iter().enumerate() {
            active[i + c] = (u[c] <= lo + eps && g[i + c] > 0.0) || (u[c] >= hi - eps && g[i + c] < 0.0);
        }
        prev_phi = u[1];
        prev_theta = u[2];
    }
}

/// `|z - P(z - g)|_inf`, using `scratch` as workspace.
fn projected_gradient_norm(
    bounds: &McpBounds,
    u_prev: &ControlInput,
    z: &[f64],
    g: &[f64],
    scratch: &mut [f64],
) -> f64 {
    for i in 0..z.len() {
        scratch[i] = z[i] - g[i];
    }
    project(bounds, u_prev, scratch);
    scratch.iter().zip(z).fold(0.0f64, |m, (p, zi)| m.max((p - zi).abs()))
}

/// Receding-horizon shift: drop the applied input and repeat the last one.
pub fn shift_warm_start(prev: &McpSolution) -> Vec<ControlInput> {
    shift_inputs(&prev.u_seq)
}

pub(crate) fn shift_inputs(u_seq: &[ControlInput]) -> Vec<ControlInput> {
    let mut out: Vec<ControlInput> = u_seq.iter().skip(1).copied().collect();
    if let Some(last) = u_seq.last() {
        out.push(*last);
    }
    out
}
