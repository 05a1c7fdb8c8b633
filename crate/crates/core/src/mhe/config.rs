use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::linalg::{check_psd, check_spd, symmetrize, weight_factor};
use crate::{Error, Result};

/// How the damped Gauss-Newton step is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepMethod {
    /// Backward Riccati recursion over the window, `O(M_t (n+q)^3)`.
    #[default]
    Structured,
    /// Dense normal equations on the stacked Jacobian.
    Dense,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintMode {
    #[default]
    Unconstrained,
    /// Clamp the prior state and disturbances onto their boxes after each
    /// step and reject steps whose rollout leaves the state or output box.
    /// Exact only while no constraint is active at the optimum.
    Projected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSettings {
    pub max_iterations: usize,
    /// First-order optimality tolerance on `‖Jᵀr‖_∞`.
    pub gradient_tol: f64,
    /// Relative step tolerance `‖Δz‖ ≤ tol·(‖z‖ + tol)`.
    pub step_tol: f64,
    pub damping_init: f64,
    pub damping_scale: f64,
    pub step_method: StepMethod,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            gradient_tol: 1e-12,
            step_tol: 1e-12,
            damping_init: 1e-3,
            damping_scale: 10.0,
            step_method: StepMethod::Structured,
        }
    }
}

impl SolverSettings {
    fn validate(&self) -> Result<()> {
        let ok = self.max_iterations > 0
            && self.gradient_tol >= 0.0
            && self.step_tol >= 0.0
            && self.damping_init > 0.0
            && self.damping_scale > 1.0
            && self.damping_init.is_finite()
            && self.damping_scale.is_finite();
        if !ok {
            return Err(Error::InvalidInput(format!("invalid solver settings: {self:?}")));
        }
        Ok(())
    }
}

/// Serializable form of [`EstimatorConfig`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfigSpec {
    pub horizon: u64,
    pub eta: f64,
    #[serde(with = "crate::linalg::rows")]
    pub p2: DMatrix<f64>,
    #[serde(with = "crate::linalg::rows")]
    pub q: DMatrix<f64>,
    #[serde(with = "crate::linalg::rows")]
    pub r: DMatrix<f64>,
    #[serde(default)]
    pub solver: SolverSettings,
    #[serde(default)]
    pub constraints: ConstraintMode,
}

/// Weights, discount and base horizon of the windowed cost, plus solver
/// settings. Square-root factors of the weights are computed once here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "EstimatorConfigSpec", into = "EstimatorConfigSpec")]
pub struct EstimatorConfig {
    spec: EstimatorConfigSpec,
    p2_factor: DMatrix<f64>,
    q_factor: DMatrix<f64>,
    r_factor: DMatrix<f64>,
}

impl TryFrom<EstimatorConfigSpec> for EstimatorConfig {
    type Error = Error;

    fn try_from(spec: EstimatorConfigSpec) -> Result<Self> {
        if spec.horizon < 1 {
            return Err(Error::InvalidInput("horizon M must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&spec.eta) {
            return Err(Error::InvalidInput(format!("eta must lie in [0, 1), got {}", spec.eta)));
        }
        check_spd(&spec.p2, "P2")?;
        check_spd(&spec.q, "Q")?;
        check_psd(&spec.r, "R")?;
        spec.solver.validate()?;
        let p2_factor = weight_factor(&spec.p2);
        let q_factor = weight_factor(&spec.q);
        let r_factor = weight_factor(&spec.r);
        Ok(Self {
            spec,
            p2_factor,
            q_factor,
            r_factor,
        })
    }
}

impl From<EstimatorConfig> for EstimatorConfigSpec {
    fn from(c: EstimatorConfig) -> Self {
        c.spec
    }
}

impl EstimatorConfig {
    pub fn new(horizon: u64, eta: f64, p2: DMatrix<f64>, q: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        EstimatorConfigSpec {
            horizon,
            eta,
            p2,
            q,
            r,
            solver: SolverSettings::default(),
            constraints: ConstraintMode::default(),
        }
        .try_into()
    }

    /// Identity weights of the given dimensions.
    pub fn identity(horizon: u64, eta: f64, n: usize, q: usize, p: usize) -> Result<Self> {
        Self::new(
            horizon,
            eta,
            DMatrix::identity(n, n),
            DMatrix::identity(q, q),
            DMatrix::identity(p, p),
        )
    }

    pub fn with_solver(mut self, solver: SolverSettings) -> Result<Self> {
        solver.validate()?;
        self.spec.solver = solver;
        Ok(self)
    }

    pub fn with_constraints(mut self, mode: ConstraintMode) -> Self {
        self.spec.constraints = mode;
        self
    }

    pub fn horizon(&self) -> u64 {
        self.spec.horizon
    }

    pub fn eta(&self) -> f64 {
        self.spec.eta
    }

    pub fn p2(&self) -> &DMatrix<f64> {
        &self.spec.p2
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.spec.q
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.spec.r
    }

    pub fn solver(&self) -> &SolverSettings {
        &self.spec.solver
    }

    pub fn constraints(&self) -> ConstraintMode {
        self.spec.constraints
    }

    pub(crate) fn p2_factor(&self) -> &DMatrix<f64> {
        &self.p2_factor
    }

    pub(crate) fn q_factor(&self) -> &DMatrix<f64> {
        &self.q_factor
    }

    pub(crate) fn r_factor(&self) -> &DMatrix<f64> {
        &self.r_factor
    }

    pub fn spec(&self) -> &EstimatorConfigSpec {
        &self.spec
    }
}

/// Parameters `(P1, P2, Q, R, η)` of a sample-based exponential i-IOSS bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, try_from = "CertificateSpec")]
pub struct IossCertificate {
    #[serde(with = "crate::linalg::rows")]
    pub p1: DMatrix<f64>,
    #[serde(with = "crate::linalg::rows")]
    pub p2: DMatrix<f64>,
    #[serde(with = "crate::linalg::rows")]
    pub q: DMatrix<f64>,
    #[serde(with = "crate::linalg::rows")]
    pub r: DMatrix<f64>,
    pub eta: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CertificateSpec {
    #[serde(with = "crate::linalg::rows")]
    p1: DMatrix<f64>,
    #[serde(with = "crate::linalg::rows")]
    p2: DMatrix<f64>,
    #[serde(with = "crate::linalg::rows")]
    q: DMatrix<f64>,
    #[serde(with = "crate::linalg::rows")]
    r: DMatrix<f64>,
    eta: f64,
}

impl TryFrom<CertificateSpec> for IossCertificate {
    type Error = Error;

    fn try_from(s: CertificateSpec) -> Result<Self> {
        Self::new(s.p1, s.p2, s.q, s.r, s.eta)
    }
}

impl IossCertificate {
    pub fn new(p1: DMatrix<f64>, p2: DMatrix<f64>, q: DMatrix<f64>, r: DMatrix<f64>, eta: f64) -> Result<Self> {
        check_spd(&p1, "P1")?;
        check_spd(&p2, "P2")?;
        if p1.nrows() != p2.nrows() {
            return Err(Error::dimension("P2", p1.nrows(), p2.nrows()));
        }
        check_psd(&q, "Q")?;
        check_psd(&r, "R")?;
        if !(0.0..1.0).contains(&eta) {
            return Err(Error::InvalidInput(format!("eta must lie in [0, 1), got {eta}")));
        }
        Ok(Self {
            p1: symmetrize(&p1),
            p2: symmetrize(&p2),
            q: symmetrize(&q),
            r: symmetrize(&r),
            eta,
        })
    }

    /// Estimator configuration using this certificate's weights.
    pub fn estimator_config(&self, horizon: u64) -> Result<EstimatorConfig> {
        EstimatorConfig::new(horizon, self.eta, self.p2.clone(), self.q.clone(), self.r.clone())
    }
}
