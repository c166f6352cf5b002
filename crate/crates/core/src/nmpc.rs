//! Multiple-shooting nonlinear MPC with a Gauss-Newton / Levenberg-Marquardt
//! solver.
//!
//! The transcription uses one RK4 step per shooting interval. The cost is
//!
//! ```text
//! sum_k dt (|y_k - y_ref,k|_Q^2 + |u_k|_R^2) + |y_N - y_ref,N|_QT^2
//! ```
//!
//! with `y` the leading state coordinates. Each iteration linearizes the
//! shooting map with dual numbers and solves the damped LQ subproblem by a
//! Riccati recursion. Steps are accepted when they lower the merit
//! `cost + penalty * sum |defect|_1`, with the penalty set from the current
//! adjoint multipliers.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::Dynamics;
use crate::error::{Error, Result};
use crate::flat_map::FlatnessDiffeomorphism;
use crate::pure_feedback::PureFeedbackModel;
use crate::sim::{rk4_map, Controller, Reference};
use crate::taylor::DualVector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OcpConfig {
    pub horizon: f64,
    pub steps: usize,
    /// Diagonal weights (scalar multiples of the identity).
    pub output_weight: f64,
    pub input_weight: f64,
    pub terminal_weight: f64,
    pub max_iters: usize,
    pub step_tol: f64,
    pub initial_damping: f64,
    pub min_damping: f64,
    /// Damping above which the solver gives up.
    pub max_damping: f64,
    /// Lower bound on the weight of the defect norm in the merit function;
    /// the weight in use is twice the largest adjoint multiplier.
    pub min_defect_penalty: f64,
}

impl Default for OcpConfig {
    fn default() -> Self {
        OcpConfig {
            horizon: 1.0,
            steps: 100,
            output_weight: 1.0,
            input_weight: 1e-3,
            terminal_weight: 1.0,
            max_iters: 50,
            step_tol: 1e-6,
            initial_damping: 1e-3,
            min_damping: 1e-9,
            max_damping: 1e12,
            min_defect_penalty: 1e-6,
        }
    }
}

impl OcpConfig {
    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || !(self.horizon > 0.0) {
            return Err(Error::TimeGrid(format!(
                "horizon {} with {} steps",
                self.horizon, self.steps
            )));
        }
        if !(self.output_weight >= 0.0 && self.terminal_weight >= 0.0 && self.input_weight > 0.0) {
            return Err(Error::Domain(
                "output weights must be non-negative and the input weight positive".into(),
            ));
        }
        Ok(())
    }
}

/// Primal iterate of the transcription.
#[derive(Debug, Clone, PartialEq)]
pub struct OcpGuess {
    pub states: Vec<Vec<f64>>,
    pub inputs: Vec<Vec<f64>>,
}

impl OcpGuess {
    /// Drops the first interval and repeats the last knot.
    pub fn shifted(&self) -> OcpGuess {
        let mut states = self.states[1..].to_vec();
        states.push(self.states.last().expect("non-empty").clone());
        let mut inputs = self.inputs[1..].to_vec();
        inputs.push(self.inputs.last().expect("non-empty").clone());
        OcpGuess { states, inputs }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcpSolution {
    pub states: Vec<Vec<f64>>,
    pub inputs: Vec<Vec<f64>>,
    /// Objective at the returned iterate.
    pub cost: f64,
    /// Merit before and after every accepted step, both under the penalty
    /// in force for that step.
    pub accepted_merits: Vec<[f64; 2]>,
    /// Number of subproblem solves.
    pub iterations: usize,
    pub converged: bool,
    /// Largest shooting defect (infinity norm over knots).
    pub max_defect: f64,
    /// Infinity norm of the reduced gradient with respect to the inputs.
    pub kkt_residual: f64,
}

impl OcpSolution {
    pub fn guess(&self) -> OcpGuess {
        OcpGuess {
            states: self.states.clone(),
            inputs: self.inputs.clone(),
        }
    }
}

struct Linearization {
    next: Vec<Vec<f64>>,
    a: Vec<DMatrix<f64>>,
    b: Vec<DMatrix<f64>>,
}

struct Problem<'a, D: ?Sized> {
    model: &'a D,
    x0: &'a [f64],
    reference: &'a [Vec<f64>],
    config: &'a OcpConfig,
    n: usize,
    m: usize,
    p: usize,
    dt: f64,
}

impl<'a, D: Dynamics + ?Sized> Problem<'a, D> {
    fn stage_weight(&self, k: usize) -> f64 {
        if k == self.config.steps {
            self.config.terminal_weight
        } else {
            self.config.output_weight * self.dt
        }
    }

    fn cost(&self, w: &OcpGuess) -> f64 {
        let mut total = 0.0;
        for (k, x) in w.states.iter().enumerate() {
            let e: f64 = (0..self.p).map(|i| (x[i] - self.reference[k][i]).powi(2)).sum();
            total += self.stage_weight(k) * e;
        }
        for u in &w.inputs {
            total += self.config.input_weight * self.dt * u.iter().map(|v| v * v).sum::<f64>();
        }
        total
    }

    fn propagate(&self, w: &OcpGuess) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(self.config.steps);
        for (x, u) in w.states.iter().zip(&w.inputs) {
            let next = rk4_map(self.model, x, u, self.dt);
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("shooting interval"));
            }
            out.push(next);
        }
        Ok(out)
    }

    fn linearize(&self, w: &OcpGuess) -> Result<Linearization> {
        let (n, m) = (self.n, self.m);
        let mut lin = Linearization {
            next: Vec::with_capacity(self.config.steps),
            a: Vec::with_capacity(self.config.steps),
            b: Vec::with_capacity(self.config.steps),
        };
        let mut xu = vec![0.0; n + m];
        for (x, u) in w.states.iter().zip(&w.inputs) {
            xu[..n].copy_from_slice(x);
            xu[n..].copy_from_slice(u);
            let seeded = DualVector::identity(&xu)?.to_duals();
            let out = rk4_map(self.model, &seeded[..n], &seeded[n..], self.dt);
            let dv = DualVector::from_duals(&out, n + m);
            if dv.value.iter().chain(dv.seed.iter()).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("shooting Jacobian"));
            }
            lin.next.push(dv.value.as_slice().to_vec());
            lin.a.push(dv.seed.columns(0, n).into_owned());
            lin.b.push(dv.seed.columns(n, m).into_owned());
        }
        Ok(lin)
    }

    fn defects(&self, w: &OcpGuess, next: &[Vec<f64>]) -> (f64, f64) {
        let mut l1 = self.x0.iter().zip(&w.states[0]).map(|(a, b)| (a - b).abs()).sum::<f64>();
        let mut inf = 0.0f64;
        for (k, f) in next.iter().enumerate() {
            for (fi, xi) in f.iter().zip(&w.states[k + 1]) {
                let d = (fi - xi).abs();
                l1 += d;
                inf = inf.max(d);
            }
        }
        (l1, inf)
    }

    fn merit(&self, w: &OcpGuess, next: &[Vec<f64>], penalty: f64) -> f64 {
        self.cost(w) + penalty * self.defects(w, next).0
    }

    /// Gradient of the objective with respect to the state at knot `k`.
    fn state_gradient(&self, w: &OcpGuess, k: usize) -> DVector<f64> {
        let weight = 2.0 * self.stage_weight(k);
        DVector::from_fn(self.n, |i, _| {
            if i < self.p {
                weight * (w.states[k][i] - self.reference[k][i])
            } else {
                0.0
            }
        })
    }

    fn input_gradient(&self, w: &OcpGuess, k: usize) -> DVector<f64> {
        let weight = 2.0 * self.config.input_weight * self.dt;
        DVector::from_fn(self.m, |i, _| weight * w.inputs[k][i])
    }

    fn state_hessian(&self, k: usize, damping: f64) -> DMatrix<f64> {
        let weight = 2.0 * self.stage_weight(k);
        DMatrix::from_fn(self.n, self.n, |i, j| {
            if i == j && i < self.p {
                weight * (1.0 + damping)
            } else {
                0.0
            }
        })
    }

    /// Solves the damped LQ subproblem; returns the primal step.
    fn riccati(&self, w: &OcpGuess, lin: &Linearization, damping: f64) -> Result<OcpGuess> {
        let (n, m, steps) = (self.n, self.m, self.config.steps);
        let mut gains: Vec<(DMatrix<f64>, DVector<f64>)> = Vec::with_capacity(steps);
        let mut v_mat = self.state_hessian(steps, damping);
        let mut v_vec = self.state_gradient(w, steps);
        let huu =
            DMatrix::<f64>::identity(m, m) * (2.0 * self.config.input_weight * self.dt * (1.0 + damping));
        for k in (0..steps).rev() {
            let (a, b) = (&lin.a[k], &lin.b[k]);
            let d = DVector::from_fn(n, |i, _| lin.next[k][i] - w.states[k + 1][i]);
            let vb = &v_mat * b;
            let va = &v_mat * a;
            let lam = &v_mat * &d + &v_vec;
            let qxx = self.state_hessian(k, damping) + a.transpose() * &va;
            let quu = &huu + b.transpose() * &vb;
            let qux = b.transpose() * &va;
            let qx = self.state_gradient(w, k) + a.transpose() * &lam;
            let qu = self.input_gradient(w, k) + b.transpose() * &lam;
            let chol = quu.cholesky().ok_or_else(|| {
                Error::LinearSolve(format!("input Hessian is not positive definite at knot {k}"))
            })?;
            let gain = -chol.solve(&qux);
            let ff = -chol.solve(&qu);
            v_mat = &qxx + qux.transpose() * &gain;
            v_mat = (&v_mat + v_mat.transpose()) * 0.5;
            v_vec = qx + qux.transpose() * &ff;
            gains.push((gain, ff));
        }
        gains.reverse();
        let mut dx = DVector::from_fn(n, |i, _| self.x0[i] - w.states[0][i]);
        let mut step = OcpGuess {
            states: Vec::with_capacity(steps + 1),
            inputs: Vec::with_capacity(steps),
        };
        for k in 0..steps {
            let (gain, ff) = &gains[k];
            let du = gain * &dx + ff;
            let d = DVector::from_fn(n, |i, _| lin.next[k][i] - w.states[k + 1][i]);
            let next = &lin.a[k] * &dx + &lin.b[k] * &du + d;
            step.states.push(dx.as_slice().to_vec());
            step.inputs.push(du.as_slice().to_vec());
            dx = next;
        }
        step.states.push(dx.as_slice().to_vec());
        Ok(step)
    }

    /// Adjoint pass through the linearization. Returns the infinity norm of
    /// the reduced gradient with respect to the inputs and the largest
    /// costate entry.
    fn adjoint(&self, w: &OcpGuess, lin: &Linearization) -> (f64, f64) {
        let steps = self.config.steps;
        let mut costate = self.state_gradient(w, steps);
        let mut gradient = 0.0f64;
        let mut multiplier = costate.amax();
        for k in (0..steps).rev() {
            let g = self.input_gradient(w, k) + lin.b[k].transpose() * &costate;
            gradient = gradient.max(g.amax());
            costate = self.state_gradient(w, k) + lin.a[k].transpose() * &costate;
            multiplier = multiplier.max(costate.amax());
        }
        (gradient, multiplier)
    }
}

fn add_step(w: &OcpGuess, step: &OcpGuess) -> OcpGuess {
    let add = |a: &Vec<Vec<f64>>, b: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
        a.iter()
            .zip(b)
            .map(|(x, dx)| x.iter().zip(dx).map(|(p, q)| p + q).collect())
            .collect()
    };
    OcpGuess {
        states: add(&w.states, &step.states),
        inputs: add(&w.inputs, &step.inputs),
    }
}

fn step_norm(step: &OcpGuess) -> f64 {
    step.states
        .iter()
        .chain(&step.inputs)
        .flat_map(|v| v.iter())
        .fold(0.0f64, |acc, v| acc.max(v.abs()))
}

/// Solves the tracking OCP from `x0`. `reference[k]` is the output target at
/// knot `k` (`steps + 1` entries). Non-convergence is reported through
/// `OcpSolution::converged`, not as an error.
pub fn solve_ocp<D: Dynamics + ?Sized>(
    model: &D,
    x0: &[f64],
    reference: &[Vec<f64>],
    guess: OcpGuess,
    config: &OcpConfig,
) -> Result<OcpSolution> {
    config.validate()?;
    let (n, m, steps) = (model.state_dim(), model.input_dim(), config.steps);
    let p = reference.first().map_or(0, Vec::len);
    if x0.len() != n || x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain(format!("initial state {x0:?} is not a finite {n}-vector")));
    }
    if reference.len() != steps + 1 || reference.iter().any(|r| r.len() != p) || p > n {
        return Err(Error::Dimension {
            what: "reference window",
            expected: steps + 1,
            got: reference.len(),
        });
    }
    if guess.states.len() != steps + 1
        || guess.inputs.len() != steps
        || guess.states.iter().any(|x| x.len() != n)
        || guess.inputs.iter().any(|u| u.len() != m)
    {
        return Err(Error::Dimension {
            what: "initial guess knots",
            expected: steps + 1,
            got: guess.states.len(),
        });
    }
    let problem = Problem {
        model,
        x0,
        reference,
        config,
        n,
        m,
        p,
        dt: config.dt(),
    };

    let mut w = guess;
    let mut lin = problem.linearize(&w)?;
    let (mut kkt_residual, mut multiplier) = problem.adjoint(&w, &lin);
    let mut accepted = Vec::new();
    let mut damping = config.initial_damping;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < config.max_iters {
        iterations += 1;
        let penalty = (2.0 * multiplier).max(config.min_defect_penalty);
        let merit = problem.merit(&w, &lin.next, penalty);
        let step = problem.riccati(&w, &lin, damping)?;
        let norm = step_norm(&step);
        let trial = add_step(&w, &step);
        let trial_merit = problem
            .propagate(&trial)
            .map(|next| problem.merit(&trial, &next, penalty))
            .unwrap_or(f64::INFINITY);
        if trial_merit <= merit {
            accepted.push([merit, trial_merit]);
            w = trial;
            lin = problem.linearize(&w)?;
            (kkt_residual, multiplier) = problem.adjoint(&w, &lin);
            damping = (damping * 0.5).max(config.min_damping);
            if norm < config.step_tol {
                converged = true;
                break;
            }
        } else {
            if norm < config.step_tol {
                // the remaining step is below round-off of the merit
                converged = true;
                break;
            }
            damping *= 10.0;
            if damping > config.max_damping {
                break;
            }
        }
    }
    let (_, max_defect) = problem.defects(&w, &lin.next);
    Ok(OcpSolution {
        cost: problem.cost(&w),
        states: w.states,
        inputs: w.inputs,
        accepted_merits: accepted,
        iterations,
        converged,
        max_defect,
        kkt_residual,
    })
}

/// Per-step record of the receding-horizon loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub t: f64,
    pub iterations: usize,
    pub converged: bool,
    pub cost: f64,
    pub wall_ns: u64,
    pub warm: bool,
}

/// Receding-horizon controller over the augmented model of a flatness
/// diffeomorphism. The first solve is initialized with the flat-map states
/// and inputs of the reference window; later solves are warm-started with
/// the shifted previous solution.
#[derive(Debug, Clone)]
pub struct NmpcController<M> {
    diffeo: FlatnessDiffeomorphism<M>,
    reference: Reference,
    config: OcpConfig,
    warm: Option<OcpSolution>,
    pub stats: Vec<SolveStats>,
}

impl<M: PureFeedbackModel> NmpcController<M> {
    pub fn new(diffeo: FlatnessDiffeomorphism<M>, reference: Reference, config: OcpConfig) -> Result<Self> {
        config.validate()?;
        Ok(NmpcController {
            diffeo,
            reference,
            config,
            warm: None,
            stats: Vec::new(),
        })
    }

    pub fn config(&self) -> &OcpConfig {
        &self.config
    }

    /// Checksum of the residual model the controller predicts with.
    pub fn model_checksum(&self) -> String {
        self.diffeo.residual().checksum()
    }

    pub fn last_solution(&self) -> Option<&OcpSolution> {
        self.warm.as_ref()
    }

    pub fn reference_window(&self, t: f64) -> Vec<Vec<f64>> {
        let dt = self.config.dt();
        (0..=self.config.steps)
            .map(|k| self.reference.position_at(t + k as f64 * dt).to_vec())
            .collect()
    }

    /// Flat-map states and inputs along the reference window.
    pub fn cold_start(&self, t: f64) -> Result<OcpGuess> {
        let dt = self.config.dt();
        let r = self.diffeo.beta();
        let mut guess = OcpGuess {
            states: Vec::with_capacity(self.config.steps + 1),
            inputs: Vec::with_capacity(self.config.steps),
        };
        for k in 0..=self.config.steps {
            let (x, u) = self
                .diffeo
                .state_and_input(&self.reference.jets(t + k as f64 * dt, r)?)?;
            guess.states.push(x);
            if k < self.config.steps {
                guess.inputs.push(u);
            }
        }
        Ok(guess)
    }

    /// Solves at `(t, x)`; `warm` selects the shifted previous solution when
    /// one exists.
    pub fn solve(&self, t: f64, x: &[f64], warm: bool) -> Result<OcpSolution> {
        let guess = match (&self.warm, warm) {
            (Some(prev), true) => prev.guess().shifted(),
            _ => self.cold_start(t)?,
        };
        solve_ocp(
            self.diffeo.augmented(),
            x,
            &self.reference_window(t),
            guess,
            &self.config,
        )
    }

    fn step(&mut self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        let start = Instant::now();
        let warm = self.warm.is_some();
        let sol = self.solve(t, x, true)?;
        let u = sol.inputs[0].clone();
        self.stats.push(SolveStats {
            t,
            iterations: sol.iterations,
            converged: sol.converged,
            cost: sol.cost,
            wall_ns: start.elapsed().as_nanos() as u64,
            warm,
        });
        self.warm = Some(sol);
        Ok(u)
    }
}

impl<M: PureFeedbackModel> Controller for NmpcController<M> {
    fn reset(&mut self, _t: f64, _x: &[f64]) -> Result<()> {
        self.warm = None;
        self.stats.clear();
        Ok(())
    }

    fn control(&mut self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        self.step(t, x).map_err(|e| Error::Controller {
            t,
            state: x.to_vec(),
            source: Box::new(e),
        })
    }
}
