use std::sync::Arc;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::{check_len, vector};
use crate::mhe::{EstimatorConfig, EstimatorState, Measurement, StepRecord};
use crate::model::{linear_as_nonlinear, GapSequence, LinearSystem, NonlinearSystem, SamplingSchedule, Time};
use crate::sim::thyroid::{build_thyroid, ThyroidParams};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SystemSpec {
    Linear(LinearSystem),
    Thyroid(ThyroidParams),
}

impl SystemSpec {
    pub fn build(&self) -> Result<NonlinearSystem> {
        match self {
            SystemSpec::Linear(system) => Ok(linear_as_nonlinear(system)),
            SystemSpec::Thyroid(params) => build_thyroid(params),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleSpec {
    /// `K_offset` generated from a cyclic gap pattern.
    Gaps {
        pattern: GapSequence,
        #[serde(default = "default_offset")]
        offset: u64,
    },
    Explicit {
        times: Vec<Time>,
    },
    /// No measurements at all.
    Never,
}

fn default_offset() -> u64 {
    1
}

impl ScheduleSpec {
    pub fn build(&self, until: Time) -> Result<SamplingSchedule> {
        match self {
            ScheduleSpec::Gaps { pattern, offset } => SamplingSchedule::from_gaps(pattern, *offset, until),
            ScheduleSpec::Explicit { times } => SamplingSchedule::explicit(times.iter().copied().filter(|t| *t <= until).collect()),
            ScheduleSpec::Never => Ok(SamplingSchedule::empty()),
        }
    }

    /// Average spacing of measurement times.
    pub fn mean_gap(&self) -> Option<f64> {
        match self {
            ScheduleSpec::Gaps { pattern, .. } => Some(pattern.mean_gap()),
            ScheduleSpec::Explicit { times } if times.len() >= 2 => {
                Some((times[times.len() - 1] - times[0]) as f64 / (times.len() - 1) as f64)
            }
            _ => None,
        }
    }
}

/// Piecewise-constant input: each row holds from its `t` until the next row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputRow {
    pub t: Time,
    #[serde(with = "vector")]
    pub u: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InputSpec {
    #[default]
    Zero,
    Table {
        rows: Vec<InputRow>,
    },
    /// The thyroid model's medication timeline.
    Medication,
}

impl InputSpec {
    /// `u_0 … u_{len−1}`.
    pub fn sequence(&self, system: &SystemSpec, m: usize, len: usize) -> Result<Vec<DVector<f64>>> {
        match self {
            InputSpec::Zero => Ok(vec![DVector::zeros(m); len]),
            InputSpec::Table { rows } => {
                if rows.windows(2).any(|w| w[0].t >= w[1].t) {
                    return Err(Error::InvalidInput("input table times must be strictly increasing".into()));
                }
                for row in rows {
                    check_len(&row.u, m, "input table row")?;
                }
                Ok((0..len as Time)
                    .map(|t| {
                        let idx = rows.partition_point(|r| r.t <= t);
                        idx.checked_sub(1).map_or_else(|| DVector::zeros(m), |i| rows[i].u.clone())
                    })
                    .collect())
            }
            InputSpec::Medication => {
                let SystemSpec::Thyroid(params) = system else {
                    return Err(Error::InvalidInput("medication input requires the thyroid system".into()));
                };
                (0..len as Time)
                    .map(|t| params.medication_at(t).map(|g| DVector::from_element(1, g)))
                    .collect()
            }
        }
    }
}

/// Everything needed to reproduce one closed-loop estimation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub system: SystemSpec,
    pub schedule: ScheduleSpec,
    #[serde(with = "vector")]
    pub x0: DVector<f64>,
    #[serde(with = "vector")]
    pub x_hat0: DVector<f64>,
    #[serde(default)]
    pub inputs: InputSpec,
    /// Half-widths of the uniform disturbance distribution, one per
    /// disturbance coordinate.
    #[serde(with = "vector")]
    pub disturbance_bounds: DVector<f64>,
    /// Number of simulated transitions `T_sim`.
    pub steps: u64,
    pub seed: u64,
    pub estimator: EstimatorConfig,
}

impl Scenario {
    pub fn validate(&self) -> Result<NonlinearSystem> {
        let sys = self.system.build()?;
        check_len(&self.x0, sys.n, "x0")?;
        check_len(&self.x_hat0, sys.n, "x_hat0")?;
        check_len(&self.disturbance_bounds, sys.q, "disturbance_bounds")?;
        if self.disturbance_bounds.iter().any(|b| !(*b >= 0.0) || !b.is_finite()) {
            return Err(Error::InvalidInput("disturbance bounds must be finite and non-negative".into()));
        }
        if self.steps == 0 {
            return Err(Error::InvalidInput("steps must be at least 1".into()));
        }
        let cfg = &self.estimator;
        if cfg.p2().nrows() != sys.n || cfg.q().nrows() != sys.q || cfg.r().nrows() != sys.p {
            return Err(Error::dimension(
                "estimator weights (P2, Q, R)",
                format!("({}, {}, {})", sys.n, sys.q, sys.p),
                format!("({}, {}, {})", cfg.p2().nrows(), cfg.q().nrows(), cfg.r().nrows()),
            ));
        }
        Ok(sys)
    }
}

/// Simulated plant data over `t = 0 … T_sim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    #[serde(with = "crate::linalg::vectors")]
    pub states: Vec<DVector<f64>>,
    #[serde(with = "crate::linalg::vectors")]
    pub inputs: Vec<DVector<f64>>,
    #[serde(with = "crate::linalg::vectors")]
    pub disturbances: Vec<DVector<f64>>,
    #[serde(with = "crate::linalg::vectors")]
    pub outputs: Vec<DVector<f64>>,
    pub available: Vec<bool>,
}

impl Trajectory {
    /// `T_sim`.
    pub fn steps(&self) -> u64 {
        self.states.len() as u64 - 1
    }

    /// Samples with `available` set, as estimator measurements.
    pub fn measurements(&self) -> Vec<Measurement> {
        self.available
            .iter()
            .enumerate()
            .filter(|(_, a)| **a)
            .map(|(t, _)| Measurement::new(t as Time, self.outputs[t].clone()))
            .collect()
    }
}

/// Forward recursion `x_{t+1} = f(x_t, u_t, w_t)`, `y_t = h(x_t, u_t, w_t)`
/// for `t = 0 … T_sim`, where `T_sim = inputs.len() − 1`.
///
/// `inputs` and `disturbances` both hold `T_sim + 1` entries; the last ones
/// only enter `y_{T_sim}`.
pub fn simulate(
    sys: &NonlinearSystem,
    x0: &DVector<f64>,
    inputs: &[DVector<f64>],
    disturbances: &[DVector<f64>],
    schedule: &SamplingSchedule,
) -> Result<Trajectory> {
    check_len(x0, sys.n, "x0")?;
    if inputs.is_empty() || inputs.len() != disturbances.len() {
        return Err(Error::dimension("disturbance sequence length", inputs.len(), disturbances.len()));
    }
    let len = inputs.len();
    let mut states = Vec::with_capacity(len);
    let mut outputs = Vec::with_capacity(len);
    let mut x = x0.clone();
    for t in 0..len {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step: t as u64 });
        }
        let y = sys.h(&x, &inputs[t], &disturbances[t]).map_err(|e| e.at(t as u64))?;
        let next = if t + 1 < len {
            Some(sys.f(&x, &inputs[t], &disturbances[t]).map_err(|e| e.at(t as u64))?)
        } else {
            None
        };
        states.push(x);
        outputs.push(y);
        if let Some(next) = next {
            x = next;
        } else {
            break;
        }
    }
    let available = (0..len as Time).map(|t| schedule.contains(t)).collect();
    Ok(Trajectory {
        states,
        inputs: inputs.to_vec(),
        disturbances: disturbances.to_vec(),
        outputs,
        available,
    })
}

/// `count` i.i.d. vectors, coordinate `i` uniform on `[−b_i, b_i]`.
///
/// The generator is ChaCha8 seeded through `seed_from_u64`; draws are
/// time-major, coordinate-minor, each `lo + (hi − lo)·U` with `U` the
/// generator's standard `[0, 1)` double.
pub fn draw_disturbances(bounds: &DVector<f64>, count: usize, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            DVector::from_iterator(
                bounds.len(),
                bounds.iter().map(|b| {
                    let u: f64 = rng.random();
                    -b + 2.0 * b * u
                }),
            )
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub scenario: Scenario,
    pub seed: u64,
    pub trajectory: Trajectory,
    #[serde(with = "crate::linalg::vectors")]
    pub estimates: Vec<DVector<f64>>,
    /// `‖x_t − x̂_t‖`.
    pub errors: Vec<f64>,
    pub rmse: f64,
    pub records: Vec<StepRecord>,
}

impl ExperimentResult {
    pub fn solves(&self) -> usize {
        self.records.iter().filter(|r| r.solved()).count()
    }

    /// Steps whose solve did not reach a convergence criterion.
    pub fn unconverged(&self) -> Vec<Time> {
        self.records
            .iter()
            .filter(|r| matches!(r.kind, crate::mhe::StepKind::Solved { converged: false, .. }))
            .map(|r| r.t)
            .collect()
    }
}

pub fn error_norms(states: &[DVector<f64>], estimates: &[DVector<f64>]) -> Vec<f64> {
    states.iter().zip(estimates).map(|(x, xh)| (x - xh).norm()).collect()
}

/// `sqrt(mean_t ‖x_t − x̂_t‖²)` over the stored error norms.
pub fn rmse(result: &ExperimentResult) -> f64 {
    rmse_of(&result.errors)
}

pub fn rmse_of(errors: &[f64]) -> f64 {
    if errors.is_empty() {
        return f64::NAN;
    }
    (errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt()
}

/// Runs the estimator over recorded data: at each `t ≥ 1` it receives
/// `u_{t−1}` and, when flagged, `y_{t−1}`.
pub fn replay(
    sys: Arc<NonlinearSystem>,
    config: Arc<EstimatorConfig>,
    x_hat0: DVector<f64>,
    inputs: &[DVector<f64>],
    outputs: &[DVector<f64>],
    available: &[bool],
) -> Result<EstimatorState> {
    if outputs.len() != available.len() || inputs.len() != available.len() {
        return Err(Error::dimension("recorded series lengths", available.len(), format!("{}/{}", inputs.len(), outputs.len())));
    }
    let mut est = EstimatorState::new(sys, config, x_hat0)?;
    for t in 1..available.len() {
        let meas: Vec<_> = if available[t - 1] {
            vec![Measurement::new(t as Time - 1, outputs[t - 1].clone())]
        } else {
            Vec::new()
        };
        est.step(&inputs[t - 1], &meas)?;
    }
    Ok(est)
}

/// Simulates the scenario and runs the estimator on it.
pub fn run_experiment(scn: &Scenario) -> Result<ExperimentResult> {
    let sys = scn.validate()?;
    let len = scn.steps as usize + 1;
    let inputs = scn.inputs.sequence(&scn.system, sys.m, len)?;
    let w = draw_disturbances(&scn.disturbance_bounds, len, scn.seed);
    let schedule = scn.schedule.build(scn.steps)?;
    let trajectory = simulate(&sys, &scn.x0, &inputs, &w, &schedule)?;
    let est = replay(
        Arc::new(sys),
        Arc::new(scn.estimator.clone()),
        scn.x_hat0.clone(),
        &trajectory.inputs,
        &trajectory.outputs,
        &trajectory.available,
    )?;
    let estimates = est.estimates().to_vec();
    let errors = error_norms(&trajectory.states, &estimates);
    Ok(ExperimentResult {
        scenario: scn.clone(),
        seed: scn.seed,
        rmse: rmse_of(&errors),
        errors,
        records: est.records().to_vec(),
        estimates,
        trajectory,
    })
}
