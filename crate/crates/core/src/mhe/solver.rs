//! Levenberg-Marquardt over the single-shooting parameterisation `z = (x_s, w)`.
//!
//! Each iteration linearizes the rollout and minimizes
//! `‖r + J·Δz‖² + λ‖Δz‖²`. The default step method solves this damped
//! linear least-squares problem with a backward Riccati recursion over the
//! window (the Jacobian of a rollout is block lower-triangular, so the
//! subproblem is a linear-quadratic estimation problem). The dense method
//! forms `JᵀJ + λI` explicitly and is kept as a cross-check.
//!
//! Damping starts at `damping_init`, is multiplied by `damping_scale` when a
//! step fails to decrease the cost and divided by it on acceptance.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::mhe::problem::{MheProblem, Rollout};
use crate::mhe::{ConstraintMode, StepMethod};
use crate::model::Time;
use crate::{Error, Result};

const DAMPING_MIN: f64 = 1e-20;
const DAMPING_MAX: f64 = 1e16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// `‖Jᵀr‖_∞` fell below the gradient tolerance.
    Gradient,
    /// An accepted step was below the relative step tolerance.
    StepSize,
    /// No damping level produced a decrease and the gradient is at rounding
    /// level.
    RoundingFloor,
    /// No damping level produced a decrease.
    Stagnated,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    /// Accepted LM steps.
    pub iterations: usize,
    /// `‖Jᵀr‖_∞` at the returned point.
    pub gradient_norm: f64,
    pub converged: bool,
    pub termination: Termination,
}

/// Optimal sequences of one window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MheSolution {
    pub t: Time,
    pub start: Time,
    /// `x̂*_{start|t} … x̂*_{t|t}`.
    #[serde(with = "crate::linalg::vectors")]
    pub states: Vec<DVector<f64>>,
    /// `ŵ*_{start|t} … ŵ*_{t−1|t}`.
    #[serde(with = "crate::linalg::vectors")]
    pub disturbances: Vec<DVector<f64>>,
    /// `ŷ*_{start|t} … ŷ*_{t−1|t}`.
    #[serde(with = "crate::linalg::vectors")]
    pub outputs: Vec<DVector<f64>>,
    pub cost: f64,
    pub report: ConvergenceReport,
}

impl MheSolution {
    /// `x̂*_{t|t}`, the estimate at the current time.
    pub fn terminal_state(&self) -> &DVector<f64> {
        self.states.last().expect("rollout has at least one state")
    }

    /// `x̂*_{j|t}` for `j` inside the window.
    pub fn state_at(&self, j: Time) -> Option<&DVector<f64>> {
        j.checked_sub(self.start).and_then(|k| self.states.get(k as usize))
    }

    /// `ŵ*_{j|t}` for `j` inside the window.
    pub fn disturbance_at(&self, j: Time) -> Option<&DVector<f64>> {
        j.checked_sub(self.start).and_then(|k| self.disturbances.get(k as usize))
    }
}

/// Per-step linearization of the residual stack around a rollout.
struct StageModel {
    /// `∂f/∂x`, `∂f/∂w`.
    fx: DMatrix<f64>,
    fw: DMatrix<f64>,
    /// weighted disturbance residual and its (diagonal-block) Jacobian
    r_w: DVector<f64>,
    jw: DMatrix<f64>,
    /// weighted output residual with Jacobians w.r.t. state and disturbance
    output: Option<(DVector<f64>, DMatrix<f64>, DMatrix<f64>)>,
}

struct Linearization {
    r_prior: DVector<f64>,
    j_prior: DMatrix<f64>,
    stages: Vec<StageModel>,
}

impl Linearization {
    fn new(problem: &MheProblem<'_>, x_s: &DVector<f64>, w: &[DVector<f64>], roll: &Rollout) -> Result<Self> {
        let cfg = problem.config;
        let sys = problem.system;
        let prior_scale = (2.0 * problem.prior_discount()).sqrt();
        let r_prior = cfg.p2_factor() * (x_s - &problem.prior) * prior_scale;
        let j_prior = cfg.p2_factor() * prior_scale;

        let mut meas = problem.measurement_steps().peekable();
        let mut stages = Vec::with_capacity(problem.len());
        for k in 0..problem.len() {
            let x = &roll.states[k];
            let u = &problem.inputs[k];
            let (fx, fw) = sys.f_jacobians(x, u, &w[k])?;
            let scale = (2.0 * problem.discount(k)).sqrt();
            let jw = cfg.q_factor() * scale;
            let r_w = &jw * &w[k];
            let output = match meas.peek() {
                Some(&(mk, m)) if mk == k => {
                    meas.next();
                    let (hx, hw) = sys.h_jacobians(x, u, &w[k])?;
                    let weight = cfg.r_factor() * problem.discount(k).sqrt();
                    let r_y = &weight * (&roll.outputs[k] - &m.y);
                    Some((r_y, &weight * hx, &weight * hw))
                }
                _ => None,
            };
            stages.push(StageModel { fx, fw, r_w, jw, output });
        }
        Ok(Self {
            r_prior,
            j_prior,
            stages,
        })
    }

    /// `Jᵀr` by an adjoint sweep, packed like the decision vector.
    fn gradient(&self, n: usize, q: usize) -> DVector<f64> {
        let len = self.stages.len();
        let mut g = DVector::zeros(n + q * len);
        let mut costate = DVector::zeros(n);
        for (k, st) in self.stages.iter().enumerate().rev() {
            let mut gw = st.jw.tr_mul(&st.r_w) + st.fw.tr_mul(&costate);
            let mut next = st.fx.tr_mul(&costate);
            if let Some((r_y, ex, ew)) = &st.output {
                gw += ew.tr_mul(r_y);
                next += ex.tr_mul(r_y);
            }
            g.rows_mut(n + k * q, q).copy_from(&gw);
            costate = next;
        }
        g.rows_mut(0, n)
            .copy_from(&(self.j_prior.tr_mul(&self.r_prior) + costate));
        g
    }

    /// Minimizer of `‖r + JΔ‖² + λ‖Δ‖²` via a backward Riccati sweep.
    ///
    /// The cost-to-go from step `k` is `Δxᵀ S_k Δx + 2 s_kᵀ Δx + const`.
    fn structured_step(&self, n: usize, q: usize, lambda: f64) -> Option<DVector<f64>> {
        let len = self.stages.len();
        let mut s_mat = DMatrix::<f64>::zeros(n, n);
        let mut s_vec = DVector::<f64>::zeros(n);
        let mut gains: Vec<(DMatrix<f64>, DVector<f64>)> = Vec::with_capacity(len);
        for st in self.stages.iter().rev() {
            let sa = &s_mat * &st.fx;
            let sg = &s_mat * &st.fw;
            let mut hxx = st.fx.tr_mul(&sa);
            let mut hxw = st.fx.tr_mul(&sg);
            let mut hww = st.fw.tr_mul(&sg) + st.jw.tr_mul(&st.jw);
            for i in 0..q {
                hww[(i, i)] += lambda;
            }
            let mut gx = st.fx.tr_mul(&s_vec);
            let mut gw = st.fw.tr_mul(&s_vec) + st.jw.tr_mul(&st.r_w);
            if let Some((r_y, ex, ew)) = &st.output {
                hxx += ex.tr_mul(ex);
                hxw += ex.tr_mul(ew);
                hww += ew.tr_mul(ew);
                gx += ex.tr_mul(r_y);
                gw += ew.tr_mul(r_y);
            }
            let hww = (&hww + hww.transpose()) * 0.5;
            let chol = hww.cholesky()?;
            // Δw = K Δx + k
            let gain = -chol.solve(&hxw.transpose());
            let feed = -chol.solve(&gw);
            s_mat = &hxx + &hxw * &gain;
            s_mat = (&s_mat + s_mat.transpose()) * 0.5;
            s_vec = gx + &hxw * &feed;
            gains.push((gain, feed));
        }
        gains.reverse();

        let mut h0 = self.j_prior.tr_mul(&self.j_prior) + s_mat;
        for i in 0..n {
            h0[(i, i)] += lambda;
        }
        let h0 = (&h0 + h0.transpose()) * 0.5;
        let g0 = self.j_prior.tr_mul(&self.r_prior) + s_vec;
        let dx0 = -h0.cholesky()?.solve(&g0);

        let mut step = DVector::zeros(n + q * len);
        step.rows_mut(0, n).copy_from(&dx0);
        let mut dx = dx0;
        for (k, (st, (gain, feed))) in self.stages.iter().zip(&gains).enumerate() {
            let dw = gain * &dx + feed;
            dx = &st.fx * &dx + &st.fw * &dw;
            step.rows_mut(n + k * q, q).copy_from(&dw);
        }
        Some(step)
    }
}

fn dense_step(jac: &DMatrix<f64>, r: &DVector<f64>, lambda: f64) -> Option<DVector<f64>> {
    let mut h = jac.tr_mul(jac);
    for i in 0..h.nrows() {
        h[(i, i)] += lambda;
    }
    let g = jac.tr_mul(r);
    Some(-h.cholesky()?.solve(&g))
}

struct Iterate {
    z: DVector<f64>,
    x_s: DVector<f64>,
    w: Vec<DVector<f64>>,
    roll: Rollout,
    cost: f64,
}

fn evaluate(problem: &MheProblem<'_>, z: DVector<f64>) -> Result<Iterate> {
    let (x_s, w) = problem.unpack(&z);
    let roll = problem.rollout(&x_s, &w)?;
    let cost = problem.residuals_of_rollout(&x_s, &w, &roll).norm_squared();
    if !cost.is_finite() {
        return Err(Error::Divergence { step: problem.start });
    }
    Ok(Iterate { z, x_s, w, roll, cost })
}

fn project(problem: &MheProblem<'_>, z: &DVector<f64>) -> DVector<f64> {
    let (x_s, w) = problem.unpack(z);
    let sys = problem.system;
    let x_s = sys.state_bounds.clamp(&x_s);
    let w: Vec<_> = w.iter().map(|wk| sys.disturbance_bounds.clamp(wk)).collect();
    problem.pack(&x_s, &w)
}

fn rollout_feasible(problem: &MheProblem<'_>, roll: &Rollout) -> bool {
    let sys = problem.system;
    roll.states.iter().all(|x| sys.state_bounds.contains(x)) && roll.outputs.iter().all(|y| sys.output_bounds.contains(y))
}

/// Solves the window starting from `init`, or from `(prior, 0)` when absent.
///
/// Non-convergence is reported through [`ConvergenceReport::converged`]
/// together with the best iterate found; a non-finite rollout is an error.
pub fn solve(problem: &MheProblem<'_>, init: Option<(DVector<f64>, Vec<DVector<f64>>)>) -> Result<MheSolution> {
    let settings = problem.config.solver();
    let projected = problem.config.constraints() == ConstraintMode::Projected;
    let (n, q) = (problem.system.n, problem.system.q);

    let (x0, w0) = init.unwrap_or_else(|| (problem.prior.clone(), vec![DVector::zeros(q); problem.len()]));
    let mut z0 = problem.pack(&x0, &w0);
    if projected {
        z0 = project(problem, &z0);
    }
    let mut cur = evaluate(problem, z0)?;

    let mut lambda = settings.damping_init;
    let mut iterations = 0;
    let termination;
    let mut gradient_norm;
    loop {
        let lin = Linearization::new(problem, &cur.x_s, &cur.w, &cur.roll)?;
        let grad = lin.gradient(n, q);
        gradient_norm = grad.amax();
        if gradient_norm <= settings.gradient_tol {
            termination = Termination::Gradient;
            break;
        }
        if iterations >= settings.max_iterations {
            termination = Termination::MaxIterations;
            break;
        }
        let dense = match settings.step_method {
            StepMethod::Dense => Some((
                problem.residuals_of_rollout(&cur.x_s, &cur.w, &cur.roll),
                problem.jacobian_of_rollout(&cur.w, &cur.roll)?,
            )),
            StepMethod::Structured => None,
        };

        let mut accepted = None;
        while lambda <= DAMPING_MAX {
            let step = match &dense {
                Some((r, jac)) => dense_step(jac, r, lambda),
                None => lin.structured_step(n, q, lambda),
            };
            let Some(step) = step.filter(|s| s.iter().all(|v| v.is_finite())) else {
                lambda *= settings.damping_scale;
                continue;
            };
            let mut z_new = &cur.z + &step;
            if projected {
                z_new = project(problem, &z_new);
            }
            let candidate = match evaluate(problem, z_new) {
                Ok(c) if !projected || rollout_feasible(problem, &c.roll) => Some(c),
                Ok(_) => None,
                // a divergent or out-of-domain trial point is a rejected step
                Err(e) if matches!(e.root(), Error::Divergence { .. } | Error::ModelDomain { .. }) => None,
                Err(e) => return Err(e),
            };
            let better = match &candidate {
                Some(c) if c.cost < cur.cost => true,
                // the cost no longer resolves the decrease: fall back to
                // halving the gradient
                Some(c) if c.cost <= cur.cost * (1.0 + 8.0 * f64::EPSILON) => {
                    let lin = Linearization::new(problem, &c.x_s, &c.w, &c.roll)?;
                    lin.gradient(n, q).amax() <= 0.5 * gradient_norm
                }
                _ => false,
            };
            if better {
                lambda = (lambda / settings.damping_scale).max(DAMPING_MIN);
                accepted = candidate;
                break;
            }
            lambda *= settings.damping_scale;
        }
        let Some(next) = accepted else {
            // no representable decrease left: accept if the gradient is at
            // rounding level relative to the cost
            termination = if gradient_norm <= f64::EPSILON.sqrt() * cur.cost.max(1.0) {
                Termination::RoundingFloor
            } else {
                Termination::Stagnated
            };
            break;
        };
        iterations += 1;
        let step_norm = (&next.z - &cur.z).norm();
        let z_norm = cur.z.norm();
        cur = next;
        if step_norm <= settings.step_tol * (z_norm + settings.step_tol) {
            let lin = Linearization::new(problem, &cur.x_s, &cur.w, &cur.roll)?;
            gradient_norm = lin.gradient(n, q).amax();
            termination = if gradient_norm <= settings.gradient_tol {
                Termination::Gradient
            } else {
                Termination::StepSize
            };
            break;
        }
    }

    let cost = problem.cost_of_rollout(&cur.x_s, &cur.w, &cur.roll);
    let converged = matches!(termination, Termination::Gradient | Termination::StepSize | Termination::RoundingFloor);
    Ok(MheSolution {
        t: problem.t,
        start: problem.start,
        states: cur.roll.states,
        disturbances: cur.w,
        outputs: cur.roll.outputs,
        cost,
        report: ConvergenceReport {
            iterations,
            gradient_norm,
            converged,
            termination,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mhe::{EstimatorConfig, Measurement, SolverSettings};
    use crate::model::{linear_as_nonlinear, LinearSystem};

    fn scalar_random_walk() -> crate::NonlinearSystem {
        linear_as_nonlinear(&LinearSystem::autonomous(DMatrix::identity(1, 1), DMatrix::identity(1, 1)).unwrap())
    }

    #[test]
    fn structured_and_dense_steps_agree() {
        let sys = linear_as_nonlinear(
            &LinearSystem::autonomous(
                DMatrix::from_row_slice(2, 2, &[0.9, 0.3, -0.2, 1.1]),
                DMatrix::from_row_slice(1, 2, &[1.0, -0.5]),
            )
            .unwrap(),
        );
        let cfg = EstimatorConfig::identity(4, 0.8, 2, 2, 1).unwrap();
        let meas = vec![
            Measurement::new(1, DVector::from_vec(vec![0.4])),
            Measurement::new(3, DVector::from_vec(vec![-1.0])),
        ];
        let prob = MheProblem::new(&sys, &cfg, 4, 0, vec![DVector::zeros(0); 4], meas, DVector::from_vec(vec![1.0, 2.0])).unwrap();
        let x_s = DVector::from_vec(vec![0.3, -0.7]);
        let w: Vec<_> = (0..4).map(|k| DVector::from_vec(vec![0.1 * k as f64, -0.2])).collect();
        let roll = prob.rollout(&x_s, &w).unwrap();
        let lin = Linearization::new(&prob, &x_s, &w, &roll).unwrap();
        let r = prob.residuals_of_rollout(&x_s, &w, &roll);
        let jac = prob.jacobian_of_rollout(&w, &roll).unwrap();
        for lambda in [1e-6, 1e-2, 10.0] {
            let a = lin.structured_step(2, 2, lambda).unwrap();
            let b = dense_step(&jac, &r, lambda).unwrap();
            assert!((&a - &b).amax() < 1e-10 * (1.0 + b.amax()), "lambda {lambda}");
        }
        let g = lin.gradient(2, 2);
        assert!((g - jac.tr_mul(&r)).amax() < 1e-12);
    }

    #[test]
    fn scalar_example_improves_on_candidate() {
        let sys = scalar_random_walk();
        let cfg = EstimatorConfig::identity(1, 0.5, 1, 1, 1).unwrap();
        let prob = MheProblem::new(
            &sys,
            &cfg,
            1,
            0,
            vec![DVector::zeros(0)],
            vec![Measurement::new(0, DVector::from_vec(vec![0.0]))],
            DVector::from_vec(vec![0.0]),
        )
        .unwrap();
        let init = (DVector::from_vec(vec![1.0]), vec![DVector::from_vec(vec![2.0])]);
        assert_eq!(prob.cost(&init.0, &init.1).unwrap(), 10.0);
        let sol = solve(&prob, Some(init)).unwrap();
        assert!(sol.report.converged);
        assert!(sol.cost < 10.0);
        // the global minimum of this instance is the zero point
        assert!(sol.cost < 1e-18);
    }

    #[test]
    fn max_iterations_returns_best_iterate_unconverged() {
        let sys = scalar_random_walk();
        let settings = SolverSettings {
            max_iterations: 1,
            gradient_tol: 0.0,
            step_tol: 0.0,
            ..Default::default()
        };
        let cfg = EstimatorConfig::identity(2, 0.9, 1, 1, 1).unwrap().with_solver(settings).unwrap();
        let prob = MheProblem::new(
            &sys,
            &cfg,
            2,
            0,
            vec![DVector::zeros(0); 2],
            vec![Measurement::new(1, DVector::from_vec(vec![5.0]))],
            DVector::from_vec(vec![0.0]),
        )
        .unwrap();
        let cold = prob.cost(&prob.prior, &[DVector::zeros(1), DVector::zeros(1)]).unwrap();
        let sol = solve(&prob, None).unwrap();
        assert!(!sol.report.converged);
        assert_eq!(sol.report.termination, Termination::MaxIterations);
        assert!(sol.cost < cold);
    }

    struct Exploding;

    impl crate::Dynamics for Exploding {
        fn transition(&self, x: &DVector<f64>, _u: &DVector<f64>, w: &DVector<f64>) -> Result<DVector<f64>> {
            Ok(x.map(|v| (v * 800.0).exp()) + w)
        }

        fn output(&self, x: &DVector<f64>, _u: &DVector<f64>, _w: &DVector<f64>) -> Result<DVector<f64>> {
            Ok(x.clone())
        }
    }

    #[test]
    fn non_finite_rollout_is_an_error() {
        let sys = crate::NonlinearSystem::new(1, 0, 1, 1, std::sync::Arc::new(Exploding));
        let cfg = EstimatorConfig::identity(3, 0.5, 1, 1, 1).unwrap();
        let prob = MheProblem::new(&sys, &cfg, 3, 0, vec![DVector::zeros(0); 3], vec![], DVector::from_vec(vec![1.0])).unwrap();
        assert!(matches!(solve(&prob, None), Err(Error::Divergence { .. })));
    }

    #[test]
    fn projected_mode_keeps_iterates_in_boxes() {
        use crate::model::BoxBounds;
        let bound = DVector::from_vec(vec![0.5]);
        let sys = scalar_random_walk()
            .with_disturbance_bounds(BoxBounds::symmetric(&bound).unwrap())
            .unwrap();
        let cfg = EstimatorConfig::identity(2, 0.9, 1, 1, 1)
            .unwrap()
            .with_constraints(ConstraintMode::Projected);
        let prob = MheProblem::new(
            &sys,
            &cfg,
            2,
            0,
            vec![DVector::zeros(0); 2],
            vec![Measurement::new(1, DVector::from_vec(vec![10.0]))],
            DVector::from_vec(vec![0.0]),
        )
        .unwrap();
        let sol = solve(&prob, None).unwrap();
        assert!(sol.disturbances.iter().all(|w| w[0].abs() <= 0.5));
        assert!(sol.cost < prob.cost(&prob.prior, &[DVector::zeros(1), DVector::zeros(1)]).unwrap());
    }
}
