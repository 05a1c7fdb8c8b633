//! Two-state hypothalamic-pituitary-thyroid model, Euler-discretized:
//!
//! ```text
//! TSH⁺ = p1 τ (U − FT4)/(s1 + FT4) + p1 τ + (1 − d1 τ) TSH + w1
//! FT4⁺ = τ p2 TSH/(s2 + TSH) + (1 − d2 τ) FT4 + G τ + w2
//! y    = TSH + w3
//! ```
//!
//! The medication term `G` enters through the single input channel.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::model::{Dynamics, NonlinearSystem, Time};
use crate::{Error, Result};

/// Daily medication: `dose` on every step of each day from `start_day`
/// on, except the listed days.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Medication {
    pub start_day: u64,
    pub dose: f64,
    #[serde(default)]
    pub skipped_days: Vec<u64>,
}

impl Medication {
    pub fn none() -> Self {
        Self {
            start_day: u64::MAX,
            dose: 0.0,
            skipped_days: Vec::new(),
        }
    }

    pub fn dose_on_day(&self, day: u64) -> f64 {
        if day >= self.start_day && !self.skipped_days.contains(&day) {
            self.dose
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThyroidParams {
    pub p1: f64,
    pub p2: f64,
    pub s1: f64,
    pub s2: f64,
    pub d1: f64,
    pub d2: f64,
    /// Euthyroid FT4 set point.
    #[serde(rename = "U")]
    pub u_set: f64,
    /// Step length in hours.
    pub tau: f64,
    pub medication: Medication,
}

impl ThyroidParams {
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("p1", self.p1),
            ("p2", self.p2),
            ("s1", self.s1),
            ("s2", self.s2),
            ("d1", self.d1),
            ("d2", self.d2),
            ("U", self.u_set),
            ("tau", self.tau),
            ("medication.dose", self.medication.dose),
        ];
        if let Some((name, _)) = named.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("thyroid parameter {name} is not finite")));
        }
        if self.tau <= 0.0 {
            return Err(Error::InvalidInput("thyroid parameter tau must be positive".into()));
        }
        self.steps_per_day()?;
        Ok(())
    }

    /// Whole number of steps per 24 h.
    pub fn steps_per_day(&self) -> Result<u64> {
        let k = 24.0 / self.tau;
        if (k - k.round()).abs() > 1e-9 || k.round() < 1.0 {
            return Err(Error::InvalidInput(format!("tau = {} h does not divide a day", self.tau)));
        }
        Ok(k.round() as u64)
    }

    /// Medication input `G` at step `t`.
    pub fn medication_at(&self, t: Time) -> Result<f64> {
        Ok(self.medication.dose_on_day(t / self.steps_per_day()?))
    }
}

#[derive(Debug, Clone)]
struct ThyroidDynamics {
    params: ThyroidParams,
}

impl ThyroidDynamics {
    fn guard(&self, x: &DVector<f64>) -> Result<()> {
        let p = &self.params;
        if p.s1 + x[1] <= 0.0 {
            return Err(Error::ModelDomain {
                step: None,
                msg: format!("s1 + FT4 = {} is not positive", p.s1 + x[1]),
            });
        }
        if p.s2 + x[0] <= 0.0 {
            return Err(Error::ModelDomain {
                step: None,
                msg: format!("s2 + TSH = {} is not positive", p.s2 + x[0]),
            });
        }
        Ok(())
    }
}

impl Dynamics for ThyroidDynamics {
    fn transition(&self, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> Result<DVector<f64>> {
        self.guard(x)?;
        let p = &self.params;
        let (tsh, ft4) = (x[0], x[1]);
        let tsh_next = p.p1 * p.tau * (p.u_set - ft4) / (p.s1 + ft4) + p.p1 * p.tau + (1.0 - p.d1 * p.tau) * tsh + w[0];
        let ft4_next = p.tau * p.p2 * tsh / (p.s2 + tsh) + (1.0 - p.d2 * p.tau) * ft4 + u[0] * p.tau + w[1];
        Ok(DVector::from_vec(vec![tsh_next, ft4_next]))
    }

    fn output(&self, x: &DVector<f64>, _u: &DVector<f64>, w: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(DVector::from_element(1, x[0] + w[2]))
    }

    fn transition_jacobians(&self, x: &DVector<f64>, _u: &DVector<f64>, _w: &DVector<f64>) -> Option<Result<(DMatrix<f64>, DMatrix<f64>)>> {
        if let Err(e) = self.guard(x) {
            return Some(Err(e));
        }
        let p = &self.params;
        let (tsh, ft4) = (x[0], x[1]);
        let a = DMatrix::from_row_slice(
            2,
            2,
            &[
                1.0 - p.d1 * p.tau,
                -p.p1 * p.tau * (p.s1 + p.u_set) / ((p.s1 + ft4) * (p.s1 + ft4)),
                p.tau * p.p2 * p.s2 / ((p.s2 + tsh) * (p.s2 + tsh)),
                1.0 - p.d2 * p.tau,
            ],
        );
        let g = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        Some(Ok((a, g)))
    }

    fn output_jacobians(&self, _x: &DVector<f64>, _u: &DVector<f64>, _w: &DVector<f64>) -> Option<Result<(DMatrix<f64>, DMatrix<f64>)>> {
        Some(Ok((
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            DMatrix::from_row_slice(1, 3, &[0.0, 0.0, 1.0]),
        )))
    }
}

/// `n = 2`, `m = 1` (medication), `q = 3`, `p = 1`.
pub fn build_thyroid(params: &ThyroidParams) -> Result<NonlinearSystem> {
    params.validate()?;
    Ok(NonlinearSystem::new(
        2,
        1,
        3,
        1,
        Arc::new(ThyroidDynamics { params: params.clone() }),
    ))
}

/// Fixed point of the noise-free map under constant medication `g`, by
/// Newton iteration from `guess`.
pub fn fixed_point(sys: &NonlinearSystem, g: f64, guess: &DVector<f64>) -> Result<DVector<f64>> {
    let u = DVector::from_element(1, g);
    let w = DVector::zeros(sys.q);
    let mut x = guess.clone();
    for _ in 0..100 {
        let r = sys.f(&x, &u, &w)? - &x;
        if r.norm() <= 1e-13 * (1.0 + x.norm()) {
            return Ok(x);
        }
        let (fx, _) = sys.f_jacobians(&x, &u, &w)?;
        let jac = fx - DMatrix::identity(sys.n, sys.n);
        let step = jac
            .lu()
            .solve(&r)
            .ok_or_else(|| Error::LinearAlgebra("singular Jacobian in fixed-point iteration".into()))?;
        x -= step;
    }
    Err(Error::LinearAlgebra("fixed-point iteration did not converge".into()))
}
