//! Closed-loop simulation and experiments.

mod experiment;
pub mod io;
mod sweep;
mod thyroid;

pub use experiment::{
    draw_disturbances, error_norms, replay, rmse, rmse_of, run_experiment, simulate, ExperimentResult, InputRow,
    InputSpec, Scenario, ScheduleSpec, SystemSpec, Trajectory,
};
pub use sweep::{sweep_schedules, SweepCase, SweepRow};
pub use thyroid::{build_thyroid, fixed_point, Medication, ThyroidParams};
