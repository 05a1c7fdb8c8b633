use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::linalg::check_len;
use crate::mhe::problem::{Measurement, MheProblem};
use crate::mhe::solver::{solve, MheSolution};
use crate::mhe::EstimatorConfig;
use crate::model::{delta, horizon, NonlinearSystem, SamplingSchedule, Time};
use crate::{Error, Result};

/// Nominal one-step prediction `f(x, u, 0)`.
pub fn open_loop_predict(x_prev: &DVector<f64>, u_prev: &DVector<f64>, sys: &NonlinearSystem) -> Result<DVector<f64>> {
    sys.f(x_prev, u_prev, &DVector::zeros(sys.q))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepKind {
    Initial,
    Solved {
        horizon: u64,
        iterations: usize,
        converged: bool,
        cost: f64,
    },
    OpenLoop {
        delta: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: Time,
    #[serde(flatten)]
    pub kind: StepKind,
}

impl StepRecord {
    pub fn solved(&self) -> bool {
        matches!(self.kind, StepKind::Solved { .. })
    }
}

/// Running sample-based MHE.
///
/// The window problem is solved only when the newest sample is one step old
/// (`δ_t = 0`); otherwise the previous estimate is propagated open loop,
/// which yields the same estimate as solving with horizon `M + δ_t`.
#[derive(Debug, Clone)]
pub struct EstimatorState {
    system: Arc<NonlinearSystem>,
    config: Arc<EstimatorConfig>,
    t: Time,
    estimates: Vec<DVector<f64>>,
    inputs: Vec<DVector<f64>>,
    measurements: BTreeMap<Time, DVector<f64>>,
    schedule: SamplingSchedule,
    last: Option<MheSolution>,
    records: Vec<StepRecord>,
}

impl EstimatorState {
    pub fn new(system: Arc<NonlinearSystem>, config: Arc<EstimatorConfig>, initial_estimate: DVector<f64>) -> Result<Self> {
        check_len(&initial_estimate, system.n, "initial estimate")?;
        if config.p2().nrows() != system.n || config.q().nrows() != system.q || config.r().nrows() != system.p {
            return Err(Error::dimension(
                "estimator weights (P2, Q, R)",
                format!("({}, {}, {})", system.n, system.q, system.p),
                format!("({}, {}, {})", config.p2().nrows(), config.q().nrows(), config.r().nrows()),
            ));
        }
        Ok(Self {
            system,
            config,
            t: 0,
            estimates: vec![initial_estimate],
            inputs: Vec::new(),
            measurements: BTreeMap::new(),
            schedule: SamplingSchedule::empty(),
            last: None,
            records: vec![StepRecord {
                t: 0,
                kind: StepKind::Initial,
            }],
        })
    }

    pub fn time(&self) -> Time {
        self.t
    }

    pub fn system(&self) -> &NonlinearSystem {
        &self.system
    }

    pub fn config(&self) -> &EstimatorConfig {
        &self.config
    }

    /// Current estimate `x̂_t`.
    pub fn estimate(&self) -> &DVector<f64> {
        self.estimates.last().expect("history is never empty")
    }

    /// `x̂_0 … x̂_t`.
    pub fn estimates(&self) -> &[DVector<f64>] {
        &self.estimates
    }

    pub fn schedule(&self) -> &SamplingSchedule {
        &self.schedule
    }

    pub fn last_solution(&self) -> Option<&MheSolution> {
        self.last.as_ref()
    }

    pub fn records(&self) -> &[StepRecord] {
        &self.records
    }

    /// Advances from `t−1` to `t` given `u_{t−1}` and any samples revealed
    /// since the previous step (all timestamped before `t`).
    pub fn step(&mut self, u_prev: &DVector<f64>, new_measurements: &[Measurement]) -> Result<&StepRecord> {
        let t = self.t + 1;
        check_len(u_prev, self.system.m, "input").map_err(|e| e.at(t))?;
        let mut last = self.schedule.times().last().copied();
        for meas in new_measurements {
            if meas.t >= t {
                return Err(Error::InvalidInput(format!("measurement at {} is not available before {t}", meas.t)).at(t));
            }
            if last.is_some_and(|l| meas.t <= l) {
                return Err(Error::InvalidInput(format!("measurement time {} is not after {}", meas.t, last.unwrap_or(0))).at(t));
            }
            last = Some(meas.t);
            check_len(&meas.y, self.system.p, "measurement").map_err(|e| e.at(t))?;
        }
        let saved = (self.schedule.clone(), self.last.clone());
        for meas in new_measurements {
            self.schedule.push(meas.t)?;
            self.measurements.insert(meas.t, meas.y.clone());
        }
        self.inputs.push(u_prev.clone());
        self.t = t;

        let d = delta(t, &self.schedule);
        let result = if d == 0 {
            self.solve_now()
        } else {
            open_loop_predict(self.estimate(), u_prev, &self.system).map(|x| (x, StepKind::OpenLoop { delta: d }))
        };
        let (x_hat, kind) = match result {
            Ok(v) => v,
            Err(e) => {
                // roll back so the state stays consistent
                for meas in new_measurements {
                    self.measurements.remove(&meas.t);
                }
                (self.schedule, self.last) = saved;
                self.inputs.pop();
                self.t = t - 1;
                return Err(e.at(t));
            }
        };
        self.estimates.push(x_hat);
        self.records.push(StepRecord { t, kind });
        Ok(self.records.last().expect("just pushed"))
    }

    fn solve_now(&mut self) -> Result<(DVector<f64>, StepKind)> {
        let problem = self.problem_at(self.t)?;
        let init = self.warm_start(&problem);
        let sol = solve(&problem, Some(init))?;
        let kind = StepKind::Solved {
            horizon: problem.len() as u64,
            iterations: sol.report.iterations,
            converged: sol.report.converged,
            cost: sol.cost,
        };
        let x_hat = sol.terminal_state().clone();
        self.last = Some(sol);
        Ok((x_hat, kind))
    }

    /// Window problem at time `t ≤ now` with horizon `M_t = min{t, M + δ_t}`
    /// and prior `x̂_{t−M_t}` from the estimate history.
    pub fn problem_at(&self, t: Time) -> Result<MheProblem<'_>> {
        if t > self.t {
            return Err(Error::InvalidInput(format!("time {t} is ahead of the estimator ({})", self.t)));
        }
        let len = horizon(t, self.config.horizon(), &self.schedule);
        let start = t - len;
        let inputs = self.inputs[start as usize..t as usize].to_vec();
        let measurements = self
            .measurements
            .range(start..t)
            .map(|(j, y)| Measurement::new(*j, y.clone()))
            .collect();
        let prior = self.estimates[start as usize].clone();
        MheProblem::new(&self.system, &self.config, t, start, inputs, measurements, prior)
    }

    /// Initial guess for `problem`: the previous optimum shifted onto the new
    /// window, zero-padded, with the start state read from the previous
    /// optimal trajectory; `(prior, 0)` when no usable solution exists.
    pub fn warm_start(&self, problem: &MheProblem<'_>) -> (DVector<f64>, Vec<DVector<f64>>) {
        let q = self.system.q;
        let cold = || (problem.prior.clone(), vec![DVector::zeros(q); problem.len()]);
        let Some(prev) = &self.last else {
            return cold();
        };
        let Some(x_s) = prev.state_at(problem.start) else {
            return cold();
        };
        let w = (problem.start..problem.t)
            .map(|j| prev.disturbance_at(j).cloned().unwrap_or_else(|| DVector::zeros(q)))
            .collect();
        (x_s.clone(), w)
    }
}
