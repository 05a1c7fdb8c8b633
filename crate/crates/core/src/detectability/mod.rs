//! Sample-based observability and detectability of linear systems.
//!
//! For `x⁺ = Ax + Bu`, `y = Cx` and sample instants `τ_1 < … < τ_k` the
//! sampled observability matrix stacks `C·A^{τ_i}`; full column rank means
//! the initial state is recoverable from those samples. The rolling-window
//! test applies this to every window of `K_1`, and [`unstable_check`] only
//! requires it of the part of `A` on or outside the unit circle.

mod falsify;
mod observability;
mod split;

use std::io::Read;

use nalgebra::DMatrix;

pub use falsify::{falsify_output_dominance, Counterexample, FalsifierSettings};
pub use observability::{
    is_sample_observable, numerical_rank, rolling_window_check, sampled_obs_matrix, window_sample_times, SampleTimes,
    DEFAULT_RANK_FACTOR,
};
pub use split::{spectral_split, unstable_check, DetectabilityVerdict, Eigenvalue, SpectralSplit, DEFAULT_CIRCLE_TOL};

use crate::{Error, Result};

/// Reads `(A, C)` from CSV: a header line `n,p`, then `n` rows of `A` and
/// `p` rows of `C`, each with `n` comma-separated entries.
pub fn read_pair_csv<R: Read>(reader: R) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut records = rdr.records();
    let header = records
        .next()
        .ok_or_else(|| Error::InvalidInput("empty matrix file".into()))??;
    let dims: Vec<usize> = header
        .iter()
        .map(|f| f.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::InvalidInput(format!("header must be `n,p`, got `{}`", header.iter().collect::<Vec<_>>().join(","))))?;
    let [n, p] = dims[..] else {
        return Err(Error::InvalidInput("header must contain exactly `n,p`".into()));
    };
    let mut rows = Vec::with_capacity(n + p);
    for (i, rec) in records.enumerate() {
        let rec = rec?;
        if rec.iter().all(str::is_empty) {
            continue;
        }
        let row: Vec<f64> = rec
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::InvalidInput(format!("row {}: {e}", i + 2)))?;
        if row.len() != n {
            return Err(Error::dimension(format!("row {} length", i + 2), n, row.len()));
        }
        rows.push(row);
    }
    if rows.len() != n + p {
        return Err(Error::dimension("matrix rows (n + p)", n + p, rows.len()));
    }
    let a = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
    let c = DMatrix::from_fn(p, n, |i, j| rows[n + i][j]);
    Ok((a, c))
}
