use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::linalg::{check_len, quad_form};
use crate::mhe::EstimatorConfig;
use crate::model::{NonlinearSystem, Time};
use crate::{Error, Result};

/// An output sample `y_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub t: Time,
    #[serde(with = "crate::linalg::vector")]
    pub y: DVector<f64>,
}

impl Measurement {
    pub fn new(t: Time, y: DVector<f64>) -> Self {
        Self { t, y }
    }
}

/// One windowed estimation instance over `[start, t]`.
///
/// Decision variables are the first state of the window and the
/// disturbances `w_start … w_{t−1}`; all later states follow by rollout.
#[derive(Debug, Clone)]
pub struct MheProblem<'a> {
    pub system: &'a NonlinearSystem,
    pub config: &'a EstimatorConfig,
    pub t: Time,
    pub start: Time,
    /// `u_start … u_{t−1}`.
    pub inputs: Vec<DVector<f64>>,
    /// Samples with times in `[start, t−1]`, increasing.
    pub measurements: Vec<Measurement>,
    /// Estimate made at time `start`, anchoring the prior term.
    pub prior: DVector<f64>,
}

/// States `x_start … x_t` and outputs `ŷ_start … ŷ_{t−1}` of a rollout.
#[derive(Debug, Clone)]
pub struct Rollout {
    pub states: Vec<DVector<f64>>,
    pub outputs: Vec<DVector<f64>>,
}

impl<'a> MheProblem<'a> {
    pub fn new(
        system: &'a NonlinearSystem,
        config: &'a EstimatorConfig,
        t: Time,
        start: Time,
        inputs: Vec<DVector<f64>>,
        measurements: Vec<Measurement>,
        prior: DVector<f64>,
    ) -> Result<Self> {
        if start > t {
            return Err(Error::InvalidInput(format!("window start {start} after current time {t}")));
        }
        let len = (t - start) as usize;
        if inputs.len() != len {
            return Err(Error::dimension("window inputs", len, inputs.len()));
        }
        for u in &inputs {
            check_len(u, system.m, "input")?;
        }
        check_len(&prior, system.n, "prior state")?;
        for (k, meas) in measurements.iter().enumerate() {
            if meas.t < start || meas.t >= t {
                return Err(Error::InvalidInput(format!(
                    "measurement time {} outside window [{start}, {}]",
                    meas.t,
                    t as i128 - 1
                )));
            }
            if k > 0 && measurements[k - 1].t >= meas.t {
                return Err(Error::InvalidInput("measurement times must be strictly increasing".into()));
            }
            check_len(&meas.y, system.p, "measurement")?;
        }
        if config.p2().nrows() != system.n {
            return Err(Error::dimension("P2", system.n, config.p2().nrows()));
        }
        if config.q().nrows() != system.q {
            return Err(Error::dimension("Q", system.q, config.q().nrows()));
        }
        if config.r().nrows() != system.p {
            return Err(Error::dimension("R", system.p, config.r().nrows()));
        }
        Ok(Self {
            system,
            config,
            t,
            start,
            inputs,
            measurements,
            prior,
        })
    }

    /// Window length `M_t`.
    pub fn len(&self) -> usize {
        (self.t - self.start) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.t == self.start
    }

    /// `n + q·M_t`.
    pub fn decision_dim(&self) -> usize {
        self.system.n + self.system.q * self.len()
    }

    pub fn residual_dim(&self) -> usize {
        self.system.n + self.system.q * self.len() + self.system.p * self.measurements.len()
    }

    /// Discount `η^{t−j−1}` of window step `k` (time `j = start + k`).
    pub(crate) fn discount(&self, k: usize) -> f64 {
        discount_pow(self.config.eta(), self.len() - k - 1)
    }

    pub(crate) fn prior_discount(&self) -> f64 {
        discount_pow(self.config.eta(), self.len())
    }

    /// Window step index of each measurement.
    pub(crate) fn measurement_steps(&self) -> impl Iterator<Item = (usize, &Measurement)> {
        self.measurements.iter().map(move |m| ((m.t - self.start) as usize, m))
    }

    fn check_decision(&self, x_s: &DVector<f64>, w: &[DVector<f64>]) -> Result<()> {
        check_len(x_s, self.system.n, "window start state")?;
        if w.len() != self.len() {
            return Err(Error::dimension("disturbance sequence", self.len(), w.len()));
        }
        for wk in w {
            check_len(wk, self.system.q, "disturbance")?;
        }
        Ok(())
    }

    /// Forward simulation of the window from `x_s` under `w`.
    pub fn rollout(&self, x_s: &DVector<f64>, w: &[DVector<f64>]) -> Result<Rollout> {
        self.check_decision(x_s, w)?;
        let len = self.len();
        let mut states = Vec::with_capacity(len + 1);
        let mut outputs = Vec::with_capacity(len);
        states.push(x_s.clone());
        for k in 0..len {
            let x = &states[k];
            let y = self.system.h(x, &self.inputs[k], &w[k])?;
            let next = self.system.f(x, &self.inputs[k], &w[k])?;
            if next.iter().chain(y.iter()).any(|v| !v.is_finite()) {
                return Err(Error::Divergence {
                    step: self.start + k as u64,
                });
            }
            outputs.push(y);
            states.push(next);
        }
        Ok(Rollout { states, outputs })
    }

    /// Windowed cost evaluated directly from the weight matrices:
    ///
    /// `2η^{M_t}‖x_s − x̄‖²_{P2} + Σ 2η^{t−j−1}‖w_j‖²_Q + Σ_{j∈K_s} η^{t−j−1}‖ŷ_j − y_j‖²_R`.
    pub fn cost(&self, x_s: &DVector<f64>, w: &[DVector<f64>]) -> Result<f64> {
        let roll = self.rollout(x_s, w)?;
        Ok(self.cost_of_rollout(x_s, w, &roll))
    }

    pub(crate) fn cost_of_rollout(&self, x_s: &DVector<f64>, w: &[DVector<f64>], roll: &Rollout) -> f64 {
        let cfg = self.config;
        let mut total = 2.0 * self.prior_discount() * quad_form(cfg.p2(), &(x_s - &self.prior));
        for (k, wk) in w.iter().enumerate() {
            total += 2.0 * self.discount(k) * quad_form(cfg.q(), wk);
        }
        for (k, meas) in self.measurement_steps() {
            total += self.discount(k) * quad_form(cfg.r(), &(&roll.outputs[k] - &meas.y));
        }
        total
    }

    /// Stacked weighted residuals `[prior; w_start..w_{t−1}; measured outputs]`
    /// whose squared norm equals [`cost`](Self::cost).
    pub fn residuals(&self, x_s: &DVector<f64>, w: &[DVector<f64>]) -> Result<DVector<f64>> {
        let roll = self.rollout(x_s, w)?;
        Ok(self.residuals_of_rollout(x_s, w, &roll))
    }

    pub(crate) fn residuals_of_rollout(&self, x_s: &DVector<f64>, w: &[DVector<f64>], roll: &Rollout) -> DVector<f64> {
        let (n, q, p) = (self.system.n, self.system.q, self.system.p);
        let cfg = self.config;
        let mut r = DVector::zeros(self.residual_dim());
        let prior_scale = (2.0 * self.prior_discount()).sqrt();
        r.rows_mut(0, n)
            .copy_from(&(cfg.p2_factor() * (x_s - &self.prior) * prior_scale));
        for (k, wk) in w.iter().enumerate() {
            let scale = (2.0 * self.discount(k)).sqrt();
            r.rows_mut(n + k * q, q).copy_from(&(cfg.q_factor() * wk * scale));
        }
        let base = n + q * self.len();
        for (i, (k, meas)) in self.measurement_steps().enumerate() {
            let scale = self.discount(k).sqrt();
            r.rows_mut(base + i * p, p)
                .copy_from(&(cfg.r_factor() * (&roll.outputs[k] - &meas.y) * scale));
        }
        r
    }

    /// Residual stack and its Jacobian with respect to `(x_s, w)`, the latter
    /// obtained by propagating state sensitivities through the rollout.
    pub fn assemble_residuals(&self, x_s: &DVector<f64>, w: &[DVector<f64>]) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let roll = self.rollout(x_s, w)?;
        let r = self.residuals_of_rollout(x_s, w, &roll);
        let jac = self.jacobian_of_rollout(w, &roll)?;
        Ok((r, jac))
    }

    pub(crate) fn jacobian_of_rollout(&self, w: &[DVector<f64>], roll: &Rollout) -> Result<DMatrix<f64>> {
        let (n, q, p) = (self.system.n, self.system.q, self.system.p);
        let cfg = self.config;
        let nz = self.decision_dim();
        let len = self.len();
        let mut jac = DMatrix::zeros(self.residual_dim(), nz);

        let prior_scale = (2.0 * self.prior_discount()).sqrt();
        jac.view_mut((0, 0), (n, n)).copy_from(&(cfg.p2_factor() * prior_scale));
        for k in 0..len {
            let scale = (2.0 * self.discount(k)).sqrt();
            jac.view_mut((n + k * q, n + k * q), (q, q))
                .copy_from(&(cfg.q_factor() * scale));
        }

        // sensitivity ∂x_k/∂z, only the first n + q·k columns are nonzero
        let mut sens = DMatrix::zeros(n, nz);
        sens.view_mut((0, 0), (n, n)).fill_with_identity();
        let base = n + q * len;
        let mut meas_iter = self.measurement_steps().enumerate().peekable();
        for k in 0..len {
            let x = &roll.states[k];
            let u = &self.inputs[k];
            if let Some(&(i, (mk, _))) = meas_iter.peek() {
                if mk == k {
                    meas_iter.next();
                    let (hx, hw) = self.system.h_jacobians(x, u, &w[k])?;
                    let weight = cfg.r_factor() * self.discount(k).sqrt();
                    let mut rows = (&weight * &hx) * &sens;
                    let mut wcols = rows.view_mut((0, n + k * q), (p, q));
                    wcols += &weight * &hw;
                    jac.view_mut((base + i * p, 0), (p, nz)).copy_from(&rows);
                }
            }
            let (fx, fw) = self.system.f_jacobians(x, u, &w[k])?;
            let mut next = &fx * &sens;
            let mut wcols = next.view_mut((0, n + k * q), (n, q));
            wcols += &fw;
            sens = next;
        }
        Ok(jac)
    }

    /// Packs `(x_s, w)` into a single decision vector.
    pub fn pack(&self, x_s: &DVector<f64>, w: &[DVector<f64>]) -> DVector<f64> {
        let (n, q) = (self.system.n, self.system.q);
        let mut z = DVector::zeros(self.decision_dim());
        z.rows_mut(0, n).copy_from(x_s);
        for (k, wk) in w.iter().enumerate() {
            z.rows_mut(n + k * q, q).copy_from(wk);
        }
        z
    }

    pub fn unpack(&self, z: &DVector<f64>) -> (DVector<f64>, Vec<DVector<f64>>) {
        let (n, q) = (self.system.n, self.system.q);
        let x_s = z.rows(0, n).into_owned();
        let w = (0..self.len()).map(|k| z.rows(n + k * q, q).into_owned()).collect();
        (x_s, w)
    }
}

/// `η^k` with `0^0 = 1`.
pub(crate) fn discount_pow(eta: f64, k: usize) -> f64 {
    if k == 0 {
        1.0
    } else {
        eta.powi(k.min(i32::MAX as usize) as i32)
    }
}
