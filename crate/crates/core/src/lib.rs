//! Sample-based moving horizon estimation.
//!
//! The crate is organised around four areas:
//!
//! * [`model`]: plants, box constraints, gap sequences, sampling schedules and
//!   the horizon arithmetic (`delta`, `horizon`) shared by everything else.
//! * [`mhe`]: the windowed least-squares problem, its Levenberg-Marquardt
//!   solver, the estimator loop with the open-loop fast path, and horizon
//!   sizing / error envelopes from an i-IOSS certificate.
//! * [`detectability`]: sample-based observability matrices, rank tests,
//!   rolling-window checks, the stable/unstable spectral split and an
//!   empirical falsifier for the output-dominance condition.
//! * [`sim`]: closed-loop simulation, the thyroid example model, RMSE and
//!   schedule sweeps, plus the CSV formats used by the command line tool.

pub mod detectability;
pub mod error;
pub mod linalg;
pub mod mhe;
pub mod model;
pub mod sim;

pub use error::{Error, Result};
pub use model::{
    BoxBounds, Dynamics, GapSequence, LinearSystem, NonlinearSystem, SamplingSchedule, Time,
};
