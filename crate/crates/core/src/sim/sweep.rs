use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::sim::experiment::{run_experiment, Scenario, ScheduleSpec};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepCase {
    pub label: String,
    pub schedule: ScheduleSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub label: String,
    pub mean_gap: Option<f64>,
    pub mean_rmse: f64,
    /// Sample standard deviation over seeds (0 for a single seed).
    pub std: f64,
    pub rmses: Vec<f64>,
}

/// Runs `base` once per (case, seed), replacing its schedule and seed.
///
/// Every case sees the same disturbance realizations for a given seed, so
/// differences between rows come from the sampling alone. `threads` caps
/// the worker count; results do not depend on it.
pub fn sweep_schedules(base: &Scenario, cases: &[SweepCase], seeds: &[u64], threads: Option<usize>) -> Result<Vec<SweepRow>> {
    if cases.is_empty() {
        return Err(Error::InvalidInput("sweep needs at least one schedule".into()));
    }
    if seeds.is_empty() {
        return Err(Error::InvalidInput("sweep needs at least one seed".into()));
    }
    base.validate()?;
    let jobs: Vec<(usize, u64)> = (0..cases.len()).flat_map(|c| seeds.iter().map(move |s| (c, *s))).collect();
    let run = || -> Result<Vec<f64>> {
        jobs.par_iter()
            .map(|&(c, seed)| {
                let mut scn = base.clone();
                scn.schedule = cases[c].schedule.clone();
                scn.seed = seed;
                run_experiment(&scn).map(|r| r.rmse)
            })
            .collect()
    };
    let rmses = match threads {
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k.max(1))
            .build()
            .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?
            .install(run)?,
        None => run()?,
    };
    Ok(cases
        .iter()
        .zip(rmses.chunks(seeds.len()))
        .map(|(case, r)| {
            let mean = r.iter().sum::<f64>() / r.len() as f64;
            let std = if r.len() > 1 {
                (r.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (r.len() - 1) as f64).sqrt()
            } else {
                0.0
            };
            SweepRow {
                label: case.label.clone(),
                mean_gap: case.schedule.mean_gap(),
                mean_rmse: mean,
                std,
                rmses: r.to_vec(),
            }
        })
        .collect())
}
