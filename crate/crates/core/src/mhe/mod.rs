//! Sample-based moving horizon estimation.
//!
//! At time `t` the estimator considers the window `[t − M_t, t]` with
//! `M_t = min{t, M + δ_t}` and minimizes
//!
//! ```text
//! J = 2η^{M_t} ‖x̂_{t−M_t|t} − x̂_{t−M_t}‖²_{P2}
//!   + Σ_{j=t−M_t}^{t−1} 2η^{t−j−1} ‖ŵ_{j|t}‖²_Q
//!   + Σ_{j ∈ [t−M_t, t−1] ∩ K_s} η^{t−j−1} ‖ŷ_{j|t} − y_j‖²_R
//! ```
//!
//! subject to the model along the window. Only sampled outputs enter the
//! last sum. Between samples the optimum is the open-loop continuation of
//! the last solve, so the estimator only solves when a new sample arrives.

mod config;
mod estimator;
mod horizon;
mod problem;
mod solver;

pub use config::{ConstraintMode, EstimatorConfig, EstimatorConfigSpec, IossCertificate, SolverSettings, StepMethod};
pub use estimator::{open_loop_predict, EstimatorState, StepKind, StepRecord};
pub use horizon::{contraction_rate, error_bound, horizon_condition, min_horizon, pencil_max};
pub use problem::{Measurement, MheProblem, Rollout};
pub use solver::{solve, ConvergenceReport, MheSolution, Termination};
